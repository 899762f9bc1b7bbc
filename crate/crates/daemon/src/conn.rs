//! Client connections: an accept loop plus a reader and a writer thread per
//! socket.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use exokit_core::proto::{GREETING, MAX_LINE};

use crate::server::Msg;

static NEXT_CONN: AtomicU64 = AtomicU64::new(1);

pub(crate) enum Line {
    Text(String),
    TooLong(usize),
    NotUtf8,
}

/// Reads one `\n`-terminated line of at most `MAX_LINE` bytes. Longer lines
/// are consumed up to their newline and reported. `None` at end of stream.
pub(crate) fn read_line(r: &mut impl BufRead) -> io::Result<Option<Line>> {
    let mut buf = Vec::with_capacity(64);
    let n = r
        .by_ref()
        .take(MAX_LINE as u64 + 1)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    } else if buf.len() > MAX_LINE {
        let mut total = buf.len();
        loop {
            buf.clear();
            let n = r.by_ref().take(4096).read_until(b'\n', &mut buf)?;
            total += n;
            if n == 0 || buf.last() == Some(&b'\n') {
                break;
            }
        }
        return Ok(Some(Line::TooLong(total)));
    }
    Ok(Some(match String::from_utf8(buf) {
        Ok(s) => Line::Text(s),
        Err(_) => Line::NotUtf8,
    }))
}

pub(crate) fn accept_loop(listener: TcpListener, mailbox: Sender<Msg>, stop: Arc<AtomicBool>) {
    if let Err(e) = listener.set_nonblocking(true) {
        log::error!("listener: {e}");
        return;
    }
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("client {peer} connected");
                if let Err(e) = start(stream, &mailbox) {
                    log::warn!("client {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                log::warn!("accept: {e}");
                std::thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn start(stream: TcpStream, mailbox: &Sender<Msg>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let id = NEXT_CONN.fetch_add(1, Ordering::Relaxed);
    let (out_tx, out_rx) = mpsc::channel::<String>();
    out_tx.send(GREETING.to_string()).expect("receiver alive");
    let writer = stream.try_clone()?;
    let reader = stream.try_clone()?;
    std::thread::Builder::new()
        .name(format!("exo-w{id}"))
        .spawn(move || write_loop(writer, out_rx))?;
    if mailbox
        .send(Msg::Connected {
            id,
            out: out_tx,
            stream,
        })
        .is_err()
    {
        return Ok(());
    }
    let mailbox = mailbox.clone();
    std::thread::Builder::new()
        .name(format!("exo-r{id}"))
        .spawn(move || read_loop(id, reader, mailbox))?;
    Ok(())
}

fn write_loop(stream: TcpStream, lines: Receiver<String>) {
    let mut w = io::BufWriter::new(stream);
    while let Ok(line) = lines.recv() {
        let mut ok = writeln!(w, "{line}").is_ok();
        // batch whatever is already queued before flushing
        while ok {
            match lines.try_recv() {
                Ok(more) => ok = writeln!(w, "{more}").is_ok(),
                Err(_) => break,
            }
        }
        if !ok || w.flush().is_err() {
            break;
        }
    }
}

fn read_loop(id: u64, stream: TcpStream, mailbox: Sender<Msg>) {
    let mut r = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut r) {
        if mailbox.send(Msg::Line { id, line }).is_err() {
            return;
        }
    }
    let _ = mailbox.send(Msg::Disconnected { id });
}
