use exokit_core::control::{Action, DirectionFilter, JerkParams, Target};
use exokit_core::model::{
    ExoskeletonBuilder, ExoskeletonConfig, JointConfig, JointId, JointKind, JointName,
    MechanicalRestriction, MotorSpec, Side,
};
use exokit_core::proto::{
    parse_command, parse_telemetry, Command, JointSelector, StopTarget, TelemetryFrame,
};
use exokit_core::runtime::Exoskeleton;
use exokit_core::sim::IntentTrajectory;
use proptest::prelude::*;

const R_ELBOW: JointId = JointId::new(Side::Right, JointName::Elbow);
const R_FLEX: JointId = JointId::new(Side::Right, JointName::ShoulderFlexion);
const R_ABD: JointId = JointId::new(Side::Right, JointName::ShoulderAbduction);

fn rig() -> ExoskeletonConfig {
    ExoskeletonBuilder::new()
        .add_joint(JointConfig::actuated(R_ELBOW).with_motor(MotorSpec::new(4.0, 300.0)))
        .unwrap()
        .add_joint(JointConfig::actuated(R_FLEX))
        .unwrap()
        .add_joint(JointConfig::sensing(R_ABD))
        .unwrap()
        .build()
        .unwrap()
        .calibrated_at_zero()
}

#[derive(Debug, Clone)]
enum Op {
    Move(bool, f64, f64),
    Lock(bool),
    Vibrate(f64, f64),
    Resist(f64),
    Amplify(f64),
    Jerks,
    Mirror(f64),
    Guide(f64, f64),
    Push(bool, f64),
    Intent(f64, f64),
    StopAll,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<bool>(), -20.0..110.0f64, 5.0..400.0f64).prop_map(|(e, t, v)| Op::Move(e, t, v)),
        any::<bool>().prop_map(Op::Lock),
        (0.0..5.0f64, 0.1..9.0f64).prop_map(|(a, f)| Op::Vibrate(a, f)),
        (0.1..4.0f64).prop_map(Op::Resist),
        (0.1..4.0f64).prop_map(Op::Amplify),
        Just(Op::Jerks),
        (-2.0..2.0f64).prop_map(Op::Mirror),
        (0.0..100.0f64, 0.0..20.0f64).prop_map(|(c, e)| Op::Guide(c, e)),
        (any::<bool>(), -40.0..40.0f64).prop_map(|(e, t)| Op::Push(e, t)),
        (0.0..100.0f64, 100.0..2000.0f64).prop_map(|(a, d)| Op::Intent(a, d)),
        Just(Op::StopAll),
    ]
}

fn apply(exo: &mut Exoskeleton, op: &Op) {
    let cfg = exo.config().clone();
    let pick = |e: bool| if e { R_ELBOW } else { R_FLEX };
    let action = match *op {
        Op::Move(e, t, v) => Action::move_to(&cfg, &[pick(e)], Target::Absolute(t), 2.0, v),
        Op::Lock(e) => Action::lock(&cfg, &[pick(e)]),
        Op::Vibrate(a, f) => Action::vibrate(&cfg, &[R_FLEX], a, f, 700.0),
        Op::Resist(t) => Action::resist(&cfg, &[R_ELBOW], t, DirectionFilter::Both),
        Op::Amplify(t) => Action::amplify(&cfg, &[R_FLEX], t, DirectionFilter::Positive),
        Op::Jerks => Action::add_jerks(
            &cfg,
            R_ELBOW,
            JerkParams {
                disp_min: 2.0,
                disp_max: 15.0,
                interval_min_ms: 50.0,
                interval_max_ms: 300.0,
                count: 3,
            },
        ),
        Op::Mirror(f) => Action::mirror(&cfg, R_ABD, R_ELBOW, f),
        Op::Guide(c, e) => Action::guide_towards(&cfg, R_FLEX, c, e, 3.0, 2.0),
        Op::Push(e, t) => {
            let _ = exo.world.inject_disturbance(pick(e), t, 200.0);
            return;
        }
        Op::Intent(a, d) => {
            let now = exo.world.time_ms();
            let traj = IntentTrajectory::ramp(0.0, a, now, d);
            exo.world.set_intent(R_ABD, traj.clone()).unwrap();
            exo.world.set_intent(R_ELBOW, traj).unwrap();
            return;
        }
        Op::StopAll => {
            exo.controller.stop_joints(&[R_ELBOW, R_FLEX]);
            return;
        }
    };
    // rejected parameters are fine; the envelope must hold either way
    if let Ok(a) = action {
        let _ = exo.controller.run_program(a);
    }
}

fn run(seed: u64, ops: &[(u16, Op)]) -> Vec<exokit_core::sim::Snapshot> {
    let mut exo = Exoskeleton::new(rig(), seed);
    let mut out = Vec::new();
    for (ticks, op) in ops {
        apply(&mut exo, op);
        for _ in 0..*ticks {
            out.push(exo.step());
            let cmds = exo.last_commands().unwrap();
            for jc in exo.config().joints() {
                let tau = cmds.torque(jc.id);
                assert!(tau.is_finite());
                match jc.motor {
                    Some(m) => assert!(tau.abs() <= m.max_torque + 1e-9, "{} {tau}", jc.id),
                    None => assert_eq!(tau, 0.0),
                }
            }
        }
    }
    out.push(exo.world.snapshot());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn torque_and_speed_stay_in_envelope(seed in any::<u64>(), ops in prop::collection::vec((1u16..60, op()), 1..12)) {
        let cfg = rig();
        for snap in run(seed, &ops) {
            for (id, s) in &snap.joints {
                prop_assert!(s.angle.is_finite() && s.velocity.is_finite() && s.acceleration.is_finite());
                let jc = cfg.joint(*id).unwrap();
                let hard = jc.hard_range();
                prop_assert!(s.angle >= hard.min_deg - 1e-9 && s.angle <= hard.max_deg + 1e-9);
                if jc.kind == JointKind::Actuated {
                    prop_assert!(s.velocity.abs() <= jc.motor.unwrap().max_speed + 1e-9, "{} {}", id, s.velocity);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_run(seed in any::<u64>(), ops in prop::collection::vec((1u16..40, op()), 1..8)) {
        prop_assert_eq!(run(seed, &ops), run(seed, &ops));
    }

    #[test]
    fn config_text_round_trip(
        kinds in prop::collection::vec(0u8..4, 6),
        torques in prop::collection::vec(0.1..10.0f64, 6),
        speeds in prop::collection::vec(1.0..462.0f64, 6),
        zero in -10.0..10.0f64,
        rates in (1u32..20, 1u32..6),
    ) {
        let mut b = ExoskeletonBuilder::new()
            .control_rate_hz(rates.0 * 10)
            .telemetry_rate_hz((rates.0 * 10 / rates.1).max(1));
        for (i, id) in JointId::all().enumerate() {
            let jc = match kinds[i] {
                0 => continue,
                1 => JointConfig::passive(id),
                2 => JointConfig::sensing(id),
                _ => JointConfig::actuated(id)
                    .with_motor(MotorSpec::new(torques[i], speeds[i]))
                    .with_restriction(MechanicalRestriction::Deg30),
            };
            b = b.add_joint(jc).unwrap();
        }
        let Ok(cfg) = b.build() else { return Ok(()) };
        let mut cfg = cfg;
        let sensed = cfg.joints().find(|j| j.kind.is_sensed()).map(|j| j.id);
        if let Some(j) = sensed {
            cfg = cfg.calibrate_zero(j, zero).unwrap();
        }
        let back = ExoskeletonConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn commands_round_trip(cmd in command()) {
        let line = cmd.to_string();
        prop_assert_eq!(parse_command(&line).unwrap(), cmd);
    }

    #[test]
    fn arbitrary_lines_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..700)) {
        let _ = exokit_core::proto::parse_command_bytes(&bytes);
    }

    #[test]
    fn telemetry_round_trip(t in any::<u32>(), a in -200.0..200.0f64, v in -900.0..900.0f64, lc in prop::option::of(-20.0..20.0f64)) {
        let f = TelemetryFrame {
            t_ms: u64::from(t),
            joint: R_ELBOW,
            angle: a,
            velocity: v,
            acceleration: -v,
            torque: a / 20.0,
            load_cell: lc,
        };
        let back = parse_telemetry(&f.to_string()).unwrap();
        prop_assert_eq!(back.t_ms, f.t_ms);
        prop_assert!((back.angle - a).abs() <= 5e-4 && (back.velocity - v).abs() <= 5e-4);
        prop_assert_eq!(back.load_cell.is_some(), lc.is_some());
    }
}

fn joint() -> impl Strategy<Value = JointId> {
    prop::sample::select(JointId::all().collect::<Vec<_>>())
}

fn joints() -> impl Strategy<Value = Vec<JointId>> {
    prop::sample::subsequence(JointId::all().collect::<Vec<_>>(), 1..=6)
}

fn num() -> impl Strategy<Value = f64> {
    // values the line grammar can carry exactly
    (-100_000i64..100_000, 0u32..4).prop_map(|(m, d)| m as f64 / 10f64.powi(d as i32))
}

fn pos() -> impl Strategy<Value = f64> {
    num().prop_map(f64::abs)
}

fn filter() -> impl Strategy<Value = DirectionFilter> {
    prop::sample::select(vec![
        DirectionFilter::Positive,
        DirectionFilter::Negative,
        DirectionFilter::Both,
    ])
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (joints(), any::<bool>(), num(), pos(), pos()).prop_map(
            |(joints, abs, t, epsilon, velocity)| Command::MoveTo {
                joints,
                target: if abs {
                    Target::Absolute(t)
                } else {
                    Target::Relative(t)
                },
                epsilon,
                velocity,
            }
        ),
        joints().prop_map(Command::Lock),
        joints().prop_map(Command::Unlock),
        joints().prop_map(Command::Sense),
        (prop::option::of(joints()), pos()).prop_map(|(j, hz)| Command::StreamOn {
            joints: j.map_or(JointSelector::All, JointSelector::Joints),
            hz,
        }),
        (any::<bool>(), 0u32..100).prop_map(|(l, cycles)| Command::Wave {
            side: if l { Side::Left } else { Side::Right },
            cycles,
        }),
        (joints(), pos(), pos(), pos()).prop_map(|(joints, amplitude, frequency, duration_ms)| {
            Command::Vibrate {
                joints,
                amplitude,
                frequency,
                duration_ms,
            }
        }),
        (joint(), joint(), num()).prop_map(|(source, destination, factor)| Command::Mirror {
            source,
            destination,
            factor
        }),
        (joints(), pos(), filter()).prop_map(|(joints, tau, filter)| Command::Resist {
            joints,
            tau,
            filter
        }),
        (joints(), pos(), filter()).prop_map(|(joints, tau, filter)| Command::Amplify {
            joints,
            tau,
            filter
        }),
        (joint(), pos(), pos(), pos(), pos(), 0u32..1000).prop_map(|(joint, a, b, c, d, count)| {
            Command::Jerks {
                joint,
                disp_min: a,
                disp_max: b,
                interval_min_ms: c,
                interval_max_ms: d,
                count,
            }
        }),
        (joint(), num(), pos(), pos(), pos()).prop_map(
            |(joint, theta, epsilon, tau_assist, tau_resist)| {
                Command::GuideAway {
                    joint,
                    theta,
                    epsilon,
                    tau_assist,
                    tau_resist,
                }
            }
        ),
        (joint(), num(), pos()).prop_map(|(joint, theta, epsilon)| Command::Constrain {
            joint,
            theta,
            epsilon
        }),
        prop::option::of(0u64..1_000_000)
            .prop_map(|id| Command::Stop(id.map_or(StopTarget::All, StopTarget::Action))),
        Just(Command::Panic),
        Just(Command::Status),
        (0u64..1_000_000).prop_map(Command::Step),
        joint().prop_map(Command::Calibrate),
    ]
}
