//! Client side of a link: subscribes to a peer daemon's telemetry and feeds
//! the frames into the local mailbox.

use std::io::{self, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::Sender;
use std::time::Duration;

use exokit_core::model::JointId;
use exokit_core::proto::{parse_telemetry, GREETING};

use crate::conn::{read_line, Line};
use crate::server::Msg;

pub(crate) struct LinkConn {
    stream: TcpStream,
}

impl LinkConn {
    /// Connects, checks the greeting and requests `sources` at `hz`.
    pub(crate) fn open(
        id: u64,
        peer: &str,
        sources: &[JointId],
        hz: u32,
        mailbox: Sender<Msg>,
    ) -> io::Result<LinkConn> {
        let addr = peer
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        stream.set_read_timeout(Some(Duration::from_secs(2)))?;
        match read_line(&mut reader)? {
            Some(Line::Text(g)) if g == GREETING => {}
            _ => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "peer did not greet with the expected protocol",
                ))
            }
        }
        let joints: Vec<String> = sources.iter().map(|j| j.to_string()).collect();
        (&stream).write_all(format!("stream on {} {hz}\n", joints.join(",")).as_bytes())?;
        // the subscription must be in place before the link is reported up
        match read_line(&mut reader)? {
            Some(Line::Text(r)) if r == "ok" => {}
            Some(Line::Text(r)) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("peer refused stream: {r}"),
                ))
            }
            _ => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed")),
        }
        stream.set_read_timeout(None)?;
        std::thread::Builder::new()
            .name(format!("exo-link{id}"))
            .spawn(move || read_frames(id, reader, mailbox))?;
        Ok(LinkConn { stream })
    }

    pub(crate) fn close(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

fn read_frames(id: u64, mut r: BufReader<TcpStream>, mailbox: Sender<Msg>) {
    loop {
        match read_line(&mut r) {
            Ok(Some(Line::Text(line))) => {
                if line.starts_with("T ") {
                    match parse_telemetry(&line) {
                        Ok(frame) => {
                            if mailbox.send(Msg::LinkFrame { link: id, frame }).is_err() {
                                return;
                            }
                        }
                        Err(e) => log::warn!("link {id}: {e}"),
                    }
                } else if line.starts_with("err") {
                    log::warn!("link {id}: peer refused: {line}");
                    break;
                }
            }
            Ok(Some(_)) => {}
            Ok(None) | Err(_) => break,
        }
    }
    let _ = mailbox.send(Msg::LinkClosed { link: id });
}
