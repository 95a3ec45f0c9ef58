use std::collections::BTreeMap;

use proptest::prelude::*;

use nlto::dataset::{encode_channels, generate, read_shard, Record, CANVAS, R_MIN_SCALE};
use nlto::problem::NEOHOOKEAN_P_MAX;
use nlto::{fingerprint, optimize, sample_problem, ProblemSpec, Scenario, ENGINE_VERSION};

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Hand-rolled reader for the shard layout, kept apart from the library one.
fn decode(bytes: &[u8]) -> (BTreeMap<String, String>, Vec<(u8, serde_json::Value, Vec<f32>)>) {
    assert_eq!(&bytes[..4], b"NLTO");
    assert_eq!(u16_at(bytes, 4), 1);
    let hlen = u32_at(bytes, 6) as usize;
    let text = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
    let header: BTreeMap<String, String> = text
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    let channels = header["channels"].split(',').count();
    let mut at = 10 + hlen;
    let mut records = Vec::new();
    while at < bytes.len() {
        let start = at;
        let kind = bytes[at];
        let mlen = u32_at(bytes, at + 1) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[at + 5..at + 5 + mlen]).unwrap();
        at += 5 + mlen;
        let floats = if kind == 0 { (channels + 1) * CANVAS * CANVAS } else { 0 };
        let payload: Vec<f32> = bytes[at..at + 4 * floats]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 4 * floats;
        assert_eq!(u32_at(bytes, at), crc32fast::hash(&bytes[start..at]));
        at += 4;
        records.push((kind, meta, payload));
    }
    assert_eq!(at, bytes.len());
    (header, records)
}

#[test]
fn generated_shard_decodes_independently_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stress.nlto");
    let file = std::fs::File::create(&path).unwrap();
    let (summary, _) = generate(Scenario::Stress, 3, 5, 2, file, |s| {
        s.nx = 12;
        s.ny = 12;
        s.load_row = s.load_row.min(12);
        s.max_iterations = 6;
    })
    .unwrap();
    assert_eq!((summary.written, summary.failed), (3, 0));

    let bytes = std::fs::read(&path).unwrap();
    let (header, records) = decode(&bytes);
    assert_eq!(header["count"], "3");
    assert_eq!(header["scenario"], "stress");
    assert_eq!(header["channels"], "u_x,u_y,P_x,P_y,V_f,r_min");
    assert_eq!(header["dtype"], "f32le");
    assert_eq!(header["fingerprint"], fingerprint());
    assert_eq!(header["engine_version"], ENGINE_VERSION);
    assert_eq!(records.len(), 3);

    let shard = read_shard(&path).unwrap();
    for (i, ((kind, meta, payload), rec)) in records.iter().zip(&shard.records).enumerate() {
        assert_eq!(meta["index"], i as u64);
        assert_eq!(rec.index(), i as u64);
        let Record::Sample { meta: m, tensor } = rec else {
            assert_eq!(*kind, 1);
            continue;
        };
        assert_eq!(*kind, 0);
        let mut all = tensor.inputs.clone();
        all.extend(&tensor.target);
        assert_eq!(payload, &all);

        // the record carries everything needed to rebuild it
        let res = optimize(&m.spec).unwrap();
        let again = encode_channels(&m.spec, &res.physical).unwrap();
        assert_eq!(&again, tensor);
        assert_eq!(res.compliance, m.compliance);

        let mut drawn = sample_problem(5, i as u64, Scenario::Stress);
        drawn.nx = 12;
        drawn.ny = 12;
        drawn.load_row = drawn.load_row.min(12);
        drawn.max_iterations = 6;
        assert_eq!(drawn, m.spec);
    }
}

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![
        Just(Scenario::Linear),
        Just(Scenario::NeoHookean),
        Just(Scenario::Stress)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channels_stay_inside_the_mesh(
        sc in scenario(),
        seed in any::<u64>(),
        index in 0u64..1000,
        nx in 1usize..63,
        ny in 1usize..63,
    ) {
        let mut spec: ProblemSpec = sample_problem(seed, index, sc);
        spec.nx = nx;
        spec.ny = ny;
        spec.load_row = spec.load_row.min(ny);
        let design: Vec<f64> = (0..nx * ny).map(|i| 0.1 + (i % 9) as f64 / 10.0).collect();
        let t = encode_channels(&spec, &design).unwrap();

        let plane = |name: &str| t.channel(name).unwrap();
        for r in 0..CANVAS {
            for c in 0..CANVAS {
                let k = r * CANVAS + c;
                let on_left = c == 0 && r <= ny;
                prop_assert_eq!(plane("u_x")[k], if on_left { 1.0 } else { 0.0 });
                prop_assert_eq!(plane("u_y")[k], plane("u_x")[k]);
                let in_mesh = r < ny && c < nx;
                prop_assert_eq!(plane("V_f")[k], if in_mesh { spec.v_f as f32 } else { 0.0 });
                if !in_mesh {
                    prop_assert_eq!(t.target[k], 0.0);
                }
                if sc == Scenario::Stress {
                    let want = if in_mesh { (spec.r_min / R_MIN_SCALE) as f32 } else { 0.0 };
                    prop_assert_eq!(plane("r_min")[k], want);
                }
                let loaded = r == spec.load_row && c == nx;
                if !loaded {
                    prop_assert_eq!(plane("P_x")[k], 0.0);
                    prop_assert_eq!(plane("P_y")[k], 0.0);
                }
            }
        }
        let k = spec.load_row * CANVAS + nx;
        let (px, py) = (plane("P_x")[k] as f64, plane("P_y")[k] as f64);
        let expected = match sc {
            Scenario::Linear => 1.0,
            Scenario::NeoHookean => spec.magnitude / NEOHOOKEAN_P_MAX,
            Scenario::Stress => spec.magnitude / sc.p_max(),
        };
        prop_assert!((px.hypot(py) - expected).abs() < 1e-6);
        prop_assert_eq!(t.cropped_target(), design.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>());
    }
}
