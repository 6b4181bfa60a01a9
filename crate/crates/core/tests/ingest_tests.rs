use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semilsm::ingest::{ingest_csv, ingest_trips, IngestConfig, TripRecord};

fn trip(s: &str, e: &str, start: f64, dur: f64) -> TripRecord {
    TripRecord {
        start_node: s.into(),
        end_node: e.into(),
        start_time: start,
        duration: dur,
    }
}

#[test]
fn hand_fixture() {
    let cfg = IngestConfig {
        window_end: 7200,
        ..Default::default()
    };
    let res = ingest_trips(
        vec![trip("a", "b", 10.0, 600.0), trip("b", "a", 3000.0, 900.0), trip("a", "a", 4000.0, 1200.0)],
        &cfg,
    )
    .unwrap();
    assert_eq!(res.node_index, vec!["a", "b"]);
    let a0 = res.tensor.slice(0);
    let a1 = res.tensor.slice(1);
    assert_eq!(a0.as_slice(), &[0.0, 2.0, 2.0, 0.0]);
    assert_eq!(a1.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn short_trip_is_excluded() {
    let cfg = IngestConfig::default();
    let res = ingest_trips(vec![trip("a", "b", 10.0, 30.0), trip("a", "c", 10.0, 300.0)], &cfg).unwrap();
    assert_eq!(res.kept, 1);
    assert_eq!(res.filtered, 1);
    assert_eq!(res.node_index, vec!["a", "c"]);
}

#[test]
fn no_survivors_is_an_error() {
    assert!(ingest_trips(vec![trip("a", "b", 10.0, 5.0)], &IngestConfig::default()).is_err());
}

#[test]
fn conservation_on_a_synthetic_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let records: Vec<TripRecord> = (0..10_000)
        .map(|_| {
            let s = format!("s{}", rng.random_range(0..80));
            let e = format!("s{}", rng.random_range(0..80));
            trip(&s, &e, rng.random_range(-3600.0..90_000.0), rng.random_range(1.0..15_000.0))
        })
        .collect();
    let cfg = IngestConfig::default();
    let survivors = records
        .iter()
        .filter(|r| r.duration >= 60.0 && r.duration <= 10_800.0 && r.start_time >= 0.0 && r.start_time < 86_400.0)
        .count();
    let res = ingest_trips(records, &cfg).unwrap();
    assert_eq!(res.kept, survivors);
    assert_eq!(res.kept + res.filtered, 10_000);
    let mut upper = 0.0;
    for s in res.tensor.slices() {
        assert_eq!(s, &s.transpose());
        for j in 0..s.ncols() {
            for i in 0..=j {
                upper += s[(i, j)];
            }
        }
    }
    assert_eq!(upper as usize, survivors);
}

#[test]
fn csv_header_and_timestamps() {
    let text = "start_id,end_id,start_time,duration_s\n\
                72,79,2019-08-01 00:00:01.4680,326\n\
                79,72,2019-08-01 01:30:00,400\n";
    let cfg = IngestConfig {
        window_start: 1_564_617_600,
        window_end: 1_564_617_600 + 86_400,
        ..Default::default()
    };
    let res = ingest_csv(text.as_bytes(), &cfg).unwrap();
    assert_eq!(res.tensor.n_times(), 24);
    assert_eq!(res.tensor.slice(0)[(0, 1)], 1.0);
    assert_eq!(res.tensor.slice(1)[(1, 0)], 1.0);
    assert!(ingest_csv("a,b\n1,2\n".as_bytes(), &cfg).is_err());
}
