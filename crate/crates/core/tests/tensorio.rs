use lookat::tensorio::{DUMP_MAGIC, DUMP_VERSION};
use lookat::{
    generate_synthetic, load_dump, save_dump, AttentionDump, Error, KeyDistribution, SynthSpec,
    Tensor3,
};
use proptest::prelude::*;

fn dump_from(h: usize, l: usize, d: usize, data: &[f32], tag: &str, causal: bool) -> AttentionDump {
    let n = h * l * d;
    let t = |o: usize| Tensor3::from_vec([h, l, d], data[o * n..(o + 1) * n].to_vec()).unwrap();
    AttentionDump::new(t(0), t(1), t(2), tag, causal).unwrap()
}

fn arb_dump() -> impl Strategy<Value = AttentionDump> {
    (
        1usize..4,
        1usize..9,
        1usize..9,
        "[a-z0-9 -]{0,12}",
        any::<bool>(),
    )
        .prop_flat_map(|(h, l, d, tag, causal)| {
            prop::collection::vec(-1e6f32..1e6, 3 * h * l * d)
                .prop_map(move |data| dump_from(h, l, d, &data, &tag, causal))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_is_bitwise_identity(dump in arb_dump()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.lkat");
        save_dump(&dump, &path).unwrap();
        let back = load_dump(&path).unwrap();
        prop_assert_eq!(&back, &dump);
        let bits = |t: &Tensor3| t.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.keys), bits(&dump.keys));
    }

    #[test]
    fn any_truncation_is_rejected(dump in arb_dump(), cut in 1usize..64) {
        let bytes = dump.to_bytes().unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(AttentionDump::from_bytes(&bytes[..keep]).is_err());
    }
}

#[test]
fn file_size_matches_layout() {
    let z = Tensor3::zeros([1, 2, 4]);
    let dump = AttentionDump::new(z.clone(), z.clone(), z, "tag", true).unwrap();
    let bytes = dump.to_bytes().unwrap();
    assert_eq!(bytes.len(), 16 + 12 + 4 + 3 + 3 * 2 * 4 * 4);
    assert_eq!(bytes[..4], DUMP_MAGIC);
    assert_eq!(
        u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        DUMP_VERSION
    );
}

#[test]
fn malformed_files() {
    let z = Tensor3::zeros([1, 2, 4]);
    let good = AttentionDump::new(z.clone(), z.clone(), z, "", false)
        .unwrap()
        .to_bytes()
        .unwrap();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(
        AttentionDump::from_bytes(&bad),
        Err(Error::BadMagic { .. })
    ));

    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(
        AttentionDump::from_bytes(&bad),
        Err(Error::UnsupportedVersion(9))
    ));

    let short = &good[..good.len() - 4];
    assert!(matches!(
        AttentionDump::from_bytes(short),
        Err(Error::PayloadLengthMismatch { .. })
    ));

    let mut long = good.clone();
    long.push(0);
    assert!(matches!(
        AttentionDump::from_bytes(&long),
        Err(Error::PayloadLengthMismatch { .. })
    ));

    let mut nan = good.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    let err = AttentionDump::from_bytes(&nan).unwrap_err();
    assert!(err.to_string().contains("non-finite"), "{err}");
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_dump("/nonexistent/x.lkat"),
        Err(Error::Io(_))
    ));
}

#[test]
fn synthetic_is_pure_function_of_spec() {
    let spec = SynthSpec {
        seed: 7,
        head_count: 2,
        seq_len: 32,
        ..SynthSpec::default()
    };
    assert_eq!(
        generate_synthetic(&spec).unwrap(),
        generate_synthetic(&spec).unwrap()
    );
    assert_ne!(
        generate_synthetic(&spec).unwrap(),
        generate_synthetic(&spec.with_seed(8)).unwrap()
    );
}

#[test]
fn isotropic_key_mean_within_three_standard_errors() {
    let spec = SynthSpec {
        distribution: KeyDistribution::IsotropicGaussian,
        ..SynthSpec::default()
    };
    let dump = generate_synthetic(&spec).unwrap();
    let k = dump.keys.as_slice();
    let n = k.len() as f64;
    let mean = k.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = k.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 3.0 * var.sqrt() / n.sqrt(), "mean {mean}");
}
