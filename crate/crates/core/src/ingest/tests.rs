use proptest::prelude::*;

use super::*;
use crate::synth::single_unit_load;

const HEADER: &str = "session_id,connection_time,done_charging_time,disconnection_time,kwh_delivered\n";

fn ts(s: &str) -> NaiveDateTime {
    parse_timestamp(s).unwrap()
}

fn session(id: &str, conn: &str, done: &str, disc: &str, kwh: f64) -> ChargingSession {
    ChargingSession {
        session_id: id.into(),
        connection: ts(conn),
        done_charging: ts(done),
        disconnection: ts(disc),
        energy_kwh: kwh,
    }
}

fn day_grid() -> TimeGrid {
    TimeGrid::day(15).unwrap()
}

#[test]
fn parses_and_filters_by_day() {
    let csv = format!(
        "{HEADER}a,2024-03-01T08:05:00,2024-03-01T09:00:00,2024-03-01T17:00:00,7.5\n\
         b,2024-03-02T08:00:00,2024-03-02T09:00:00,2024-03-02T10:00:00,3\n\
         c,2024-03-01T22:00:00,2024-03-02T01:00:00,2024-03-02T02:00:00,4\n"
    );
    let day = NaiveDate::from_ymd_opt(2024, 3, 1);
    let set = parse_sessions(csv.as_bytes(), day, false).unwrap();
    assert_eq!(set.sessions.len(), 1);
    assert_eq!(set.sessions[0].session_id, "a");
    assert_eq!(set.sessions[0].energy_kwh, 7.5);
    assert_eq!((set.other_days, set.spans_midnight), (1, 1));

    let all = parse_sessions(csv.as_bytes(), None, false).unwrap();
    assert_eq!(all.sessions.len(), 2);
    assert_eq!(all.spans_midnight, 1);
}

#[test]
fn offsets_keep_local_time() {
    let t = ts("2024-03-01T08:05:00-08:00");
    assert_eq!(t, ts("2024-03-01T08:05:00"));
    assert_eq!(slot_of(&t, &day_grid()), 33);
}

#[test]
fn unknown_columns_need_lenient_mode() {
    let csv = "session_id,connection_time,done_charging_time,disconnection_time,kwh_delivered,site\n\
               a,2024-03-01T08:00:00,2024-03-01T09:00:00,2024-03-01T10:00:00,1,x\n";
    match parse_sessions(csv.as_bytes(), None, false) {
        Err(Error::Parse { line: 1, message }) => assert!(message.contains("site")),
        other => panic!("{other:?}"),
    }
    assert_eq!(parse_sessions(csv.as_bytes(), None, true).unwrap().sessions.len(), 1);
}

#[test]
fn bad_rows_report_their_line() {
    let cases = [
        "a,2024-03-01T08:00:00,2024-03-01T09:00:00,2024-03-01T10:00:00,-1\n",
        "a,yesterday,2024-03-01T09:00:00,2024-03-01T10:00:00,1\n",
        "a,2024-03-01T08:00:00,2024-03-01T09:00:00,2024-03-01T10:00:00,lots\n",
        "a,2024-03-01T08:00:00,2024-03-01T07:00:00,2024-03-01T10:00:00,1\n",
    ];
    for row in cases {
        let csv = format!("{HEADER}ok,2024-03-01T08:00:00,2024-03-01T09:00:00,2024-03-01T10:00:00,1\n{row}");
        match parse_sessions(csv.as_bytes(), None, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3, "{row}"),
            other => panic!("{row}: {other:?}"),
        }
    }
    let missing = "session_id,connection_time\n";
    assert!(matches!(parse_sessions(missing.as_bytes(), None, false), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn load_from_session() {
    let s = session("a", "2024-03-01T08:05:00", "2024-03-01T09:10:00", "2024-03-01T12:00:00", 6.5);
    let cfg = ScenarioConfig::default();
    let grid = day_grid();
    let l = session_to_load(&s, &grid, &cfg).unwrap();
    // 65 minutes round up to five 15-minute slots
    assert_eq!(l.tau, 5);
    assert!((l.level - 6.5 / 1.25).abs() < 1e-12);
    assert!((l.energy() * grid.slot_hours() - 6.5).abs() < 1e-12);
    assert_eq!(l.ubar, 100.0);
    // window 33..=49
    assert_eq!(l.dis_start[31], 0.01);
    assert_eq!(l.dis_start[32], 0.0);
    assert_eq!(l.dis_end[48], 0.0);
    assert_eq!(l.dis_end[49], 0.01);

    let on_demand = ScenarioConfig { mode: FlexibilityMode::OnDemand, ..cfg };
    let l = session_to_load(&s, &grid, &on_demand).unwrap();
    assert_eq!(l.dis_start[32], 0.0);
    assert!(l.dis_end[33] > 0.0);
}

#[test]
fn unit_conversions() {
    let grid = day_grid();
    let cfg = ScenarioConfig::default();
    let five_hours = session("a", "2024-03-01T08:00:00", "2024-03-01T13:00:00", "2024-03-01T17:00:00", 25.0);
    let l = session_to_load(&five_hours, &grid, &cfg).unwrap();
    assert_eq!((l.tau, l.level), (20, 5.0));
    let one_slot = session("b", "2024-03-01T08:00:00", "2024-03-01T08:15:00", "2024-03-01T09:00:00", 1.0);
    let l = session_to_load(&one_slot, &grid, &cfg).unwrap();
    assert_eq!((l.tau, l.level), (1, 4.0));
}

#[test]
fn header_only_file_is_empty() {
    let set = parse_sessions(HEADER.as_bytes(), None, false).unwrap();
    assert!(set.sessions.is_empty());
}

#[test]
fn sessions_that_do_not_fit_are_rejected() {
    let grid = day_grid();
    let cfg = ScenarioConfig::default();
    let instant = session("a", "2024-03-01T08:00:00", "2024-03-01T08:00:00", "2024-03-01T09:00:00", 1.0);
    assert!(session_to_load(&instant, &grid, &cfg).is_err());
    let late = session("b", "2024-03-01T23:50:00", "2024-03-01T23:59:59", "2024-03-01T23:59:59", 1.0);
    assert_eq!(session_to_load(&late, &grid, &cfg).unwrap().tau, 1);
    let short = TimeGrid::new(40, 15).unwrap();
    let over = session("c", "2024-03-01T09:00:00", "2024-03-01T11:00:00", "2024-03-01T11:00:00", 1.0);
    assert!(session_to_load(&over, &short, &cfg).is_err());
    // a disconnection past the horizon is clipped to the last slot
    let clip = session("d", "2024-03-01T09:00:00", "2024-03-01T09:30:00", "2024-03-01T20:00:00", 1.0);
    let l = session_to_load(&clip, &short, &cfg).unwrap();
    assert!(l.dis_end.iter().all(|v| *v == 0.0));
}

#[test]
fn generation_fits_the_grid() {
    let grid = TimeGrid::new(4, 15).unwrap();
    let exact = "timestamp,kw\n2024-03-01T00:00:00,1\n2024-03-01T00:15:00,2\n2024-03-01T00:30:00,3\n2024-03-01T00:45:00,4\n";
    let g = parse_generation(exact.as_bytes(), &grid, false).unwrap();
    assert_eq!((g.kw, g.resampling), (vec![1.0, 2.0, 3.0, 4.0], Resampling::Exact));

    let hourly = "timestamp,kw\n2024-03-01T00:00:00,1\n2024-03-01T00:30:00,3\n";
    let g = parse_generation(hourly.as_bytes(), &grid, false).unwrap();
    assert_eq!((g.kw, g.resampling), (vec![1.0, 1.0, 3.0, 3.0], Resampling::Hold));

    let g = resample(&[1.0, 3.0, 2.0, 2.0, 0.0, 0.0, 5.0, 7.0], 4).unwrap();
    assert_eq!((g.kw, g.resampling), (vec![2.0, 2.0, 0.0, 6.0], Resampling::Average));

    assert!(matches!(resample(&[1.0; 3], 4), Err(Error::Dimension(_))));
    assert!(resample(&[], 4).is_err());
}

#[test]
fn bad_generation_rows() {
    let grid = TimeGrid::new(2, 15).unwrap();
    let negative = "timestamp,kw\n2024-03-01T00:00:00,1\n2024-03-01T00:15:00,-2\n";
    assert!(matches!(parse_generation(negative.as_bytes(), &grid, false), Err(Error::Parse { line: 3, .. })));
    let backwards = "timestamp,kw\n2024-03-01T00:15:00,1\n2024-03-01T00:00:00,2\n";
    assert!(matches!(parse_generation(backwards.as_bytes(), &grid, false), Err(Error::Parse { line: 3, .. })));
    let extra = "timestamp,kw,site\n2024-03-01T00:00:00,1,x\n2024-03-01T00:15:00,2,x\n";
    assert!(parse_generation(extra.as_bytes(), &grid, false).is_err());
    assert!(parse_generation(extra.as_bytes(), &grid, true).is_ok());
}

#[test]
fn surge_adds_the_requested_energy() {
    let base = single_unit_load(4, 10.0);
    let mut pool = base.loads.clone();
    pool.push(LoadType { id: "big".into(), level: 3.0, ..base.loads[0].clone() });
    let out = build_surge(&base, &pool, 50, 7).unwrap();
    let base_energy: f64 = base.loads.iter().map(LoadType::energy).sum();
    let added: f64 = out.loads[1..].iter().map(LoadType::energy).sum();
    assert!(added >= 0.5 * base_energy);
    assert!(out.loads[1..].iter().enumerate().all(|(k, l)| l.id.ends_with(&format!("#{}", k + 1))));
    assert_eq!(build_surge(&base, &pool, 50, 7).unwrap(), out);
    assert_eq!(build_surge(&base, &pool, 0, 7).unwrap(), base);
    assert!(build_surge(&base, &[], 25, 7).is_err());
    assert_eq!(build_surge(&base, &[], 0, 7).unwrap(), base);
}

#[test]
fn full_surge_overshoots_by_less_than_one_load() {
    let base = single_unit_load(8, 10.0);
    let pool: Vec<LoadType> = (1..5)
        .map(|k| LoadType { id: format!("p{k}"), tau: k, level: 0.5 * k as f64, ..base.loads[0].clone() })
        .collect();
    let base = build_surge(&base, &pool, 100, 1).unwrap();
    let base_energy: f64 = base.loads.iter().map(LoadType::energy).sum();
    let largest = pool.iter().map(LoadType::energy).fold(0.0, f64::max);
    for seed in 0..50 {
        let out = build_surge(&base, &pool, 100, seed).unwrap();
        let added: f64 = out.loads[base.loads.len()..].iter().map(LoadType::energy).sum();
        assert!(added >= base_energy && added < base_energy + largest, "{added}");
    }
}

#[test]
fn surge_draws_agree_across_modes() {
    let grid = day_grid();
    let sessions: Vec<ChargingSession> = (0..6)
        .map(|k| {
            let h = 8 + k;
            session(
                &format!("s{k}"),
                &format!("2024-03-01T{h:02}:00:00"),
                &format!("2024-03-01T{h:02}:40:00"),
                "2024-03-01T20:00:00",
                1.0 + k as f64,
            )
        })
        .collect();
    let ids = |mode| {
        let cfg = ScenarioConfig { mode, ..ScenarioConfig::default() };
        let (base, rejected) = build_instance(&sessions, vec![0.0; 96], grid, &cfg).unwrap();
        assert!(rejected.is_empty());
        let surged = build_surge(&base, &base.loads, 75, 3).unwrap();
        surged.loads.iter().map(|l| l.id.clone()).collect::<Vec<_>>()
    };
    assert_eq!(ids(FlexibilityMode::Quadratic), ids(FlexibilityMode::OnDemand));
}

#[test]
fn config_validation() {
    assert!(ScenarioConfig::default().validate().is_ok());
    assert!(ScenarioConfig { surge_pct: 30, ..Default::default() }.validate().is_err());
    assert!(ScenarioConfig { cost_a: 0.0, ..Default::default() }.validate().is_err());
    assert!(ScenarioConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
}

fn arb_session() -> impl Strategy<Value = ChargingSession> {
    (0u32..1440, 0u32..600, 0u32..600, 0u32..100_000, "[a-z0-9_-]{1,12}").prop_map(|(start, done, extra, kwh, id)| {
        let base = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let at = |m: u32| base + chrono::Duration::minutes(m as i64) + chrono::Duration::seconds((m % 7) as i64);
        ChargingSession {
            session_id: id,
            connection: at(start),
            done_charging: at(start + done),
            disconnection: at(start + done + extra),
            energy_kwh: kwh as f64 / 1000.0 + 1.0 / 3.0,
        }
    })
}

proptest! {
    #[test]
    fn sessions_round_trip(sessions in proptest::collection::vec(arb_session(), 0..20)) {
        let mut unique = HashSet::new();
        let sessions: Vec<_> = sessions.into_iter().filter(|s| unique.insert(s.session_id.clone())).collect();
        let mut buf = Vec::new();
        write_sessions(&mut buf, &sessions).unwrap();
        let back = parse_sessions(buf.as_slice(), None, false).unwrap();
        let kept: Vec<_> = sessions
            .iter()
            .filter(|s| s.done_charging.date() == s.connection.date() && s.disconnection.date() == s.connection.date())
            .cloned()
            .collect();
        prop_assert_eq!(back.sessions.len() + back.spans_midnight, sessions.len());
        prop_assert_eq!(&back.sessions, &kept);
        for (a, b) in back.sessions.iter().zip(&kept) {
            prop_assert_eq!(a.energy_kwh.to_bits(), b.energy_kwh.to_bits());
        }
    }

    #[test]
    fn loads_carry_the_session_energy(s in arb_session()) {
        let grid = day_grid();
        let cfg = ScenarioConfig::default();
        let same_day = s.done_charging.date() == s.connection.date();
        if let (true, Ok(l)) = (same_day, session_to_load(&s, &grid, &cfg)) {
            prop_assert!((l.energy() * grid.slot_hours() - s.energy_kwh).abs() <= 1e-12 * (1.0 + s.energy_kwh));
            let t_c = slot_of(&s.connection, &grid);
            prop_assert!(t_c + l.tau - 1 <= grid.slots);
            prop_assert!(l.tau as i64 * 15 * 60 >= (s.done_charging - s.connection).num_seconds());
        }
    }

    #[test]
    fn hold_then_average_recovers_the_series(v in proptest::collection::vec(0.0f64..100.0, 1..12), k in 1usize..5) {
        let held = resample(&v, v.len() * k).unwrap();
        let back = resample(&held.kw, v.len()).unwrap();
        for (a, b) in back.kw.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
