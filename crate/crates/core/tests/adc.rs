mod common;

use common::*;
use lookat::adc::query_op_count;
use lookat::attention::attention_with_keys;
use lookat::{
    adc_scores, build_luts, encode_keys, generate_synthetic, lookat_attention, reconstruct,
    reference_attention, train_codebook, AttentionDump, Codebook, CompressedKeyCache, Error,
    PqConfig, SynthSpec, Tensor3,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_equal_dot_with_reconstruction(seed in any::<u64>(), m in prop::sample::select(vec![1usize, 2, 4, 8, 16]), k in 1usize..=256, len in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, m, k, 32 / m);
        let query = normal_vec(&mut rng, 32);
        let codes: Vec<u8> = (0..len * m).map(|_| rng.gen_range(0..k) as u8).collect();
        let cache = CompressedKeyCache::from_codes(1, len, m, codes, cb.id()).unwrap();
        let scores = adc_scores(&build_luts(&query, &cb).unwrap(), &cache, 0).unwrap();
        let recon = reconstruct(&cache, &cb).unwrap();
        for (j, &s) in scores.iter().enumerate() {
            let key = recon.row(0, j);
            let exact = dot_f64(&query, key);
            let mass: f64 = query.iter().zip(key).map(|(&a, &b)| (a as f64 * b as f64).abs()).sum();
            prop_assert!((s as f64 - exact).abs() <= 1e-4 * mass.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn tables_match_subspace_products(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, 4, 16, 8);
        let q = normal_vec(&mut rng, 32);
        let luts = build_luts(&q, &cb).unwrap();
        for i in 0..4 {
            for c in 0..16 {
                let want = dot_f64(&q[i * 8..(i + 1) * 8], cb.centroid(i, c));
                prop_assert!((luts.table(i)[c] as f64 - want).abs() <= 1e-5 * (1.0 + want.abs()));
            }
        }
    }
}

#[test]
fn degenerate_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cb = random_codebook(&mut rng, 2, 8, 4);
    let luts = build_luts(&[0.0; 8], &cb).unwrap();
    assert!(luts.as_slice().iter().all(|&x| x == 0.0));

    let q: Vec<f32> = [cb.centroid(0, 3), cb.centroid(1, 5)].concat();
    let luts = build_luts(&q, &cb).unwrap();
    let norm2 = |c: &[f32]| c.iter().map(|x| x * x).sum::<f32>();
    assert!((luts.table(0)[3] - norm2(cb.centroid(0, 3))).abs() < 1e-6);
    assert!((luts.table(1)[5] - norm2(cb.centroid(1, 5))).abs() < 1e-6);

    let cache = CompressedKeyCache::from_codes(1, 1, 2, vec![3, 7], cb.id()).unwrap();
    let s = adc_scores(&luts, &cache, 0).unwrap();
    assert_eq!(s, vec![luts.table(0)[3] + luts.table(1)[7]]);
}

#[test]
fn error_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cb = random_codebook(&mut rng, 2, 8, 4);
    let luts = build_luts(&normal_vec(&mut rng, 8), &cb).unwrap();
    let cache = CompressedKeyCache::from_codes(2, 1, 2, vec![0; 4], cb.id()).unwrap();
    assert!(matches!(
        adc_scores(&luts, &cache, 2),
        Err(Error::HeadOutOfRange {
            head: 2,
            head_count: 2
        })
    ));
    let bad = CompressedKeyCache::from_codes(1, 1, 2, vec![0, 9], cb.id()).unwrap();
    assert!(matches!(
        adc_scores(&luts, &bad, 0),
        Err(Error::CorruptCode { code: 9, .. })
    ));
    assert!(matches!(
        build_luts(&[0.0; 7], &cb),
        Err(Error::DimensionMismatch { .. })
    ));

    let dump = generate_synthetic(&SynthSpec {
        head_count: 1,
        seq_len: 300,
        head_dim: 8,
        ..SynthSpec::default()
    })
    .unwrap();
    let trained = train_codebook(dump.keys.as_slice(), 8, &PqConfig::with_subspaces(2)).unwrap();
    let cache = encode_keys(&dump.keys, &trained).unwrap();
    assert!(
        lookat_attention(&dump, &cache, &cb).is_err(),
        "codes from another codebook"
    );
}

fn small_dump(seed: u64, causal: bool) -> AttentionDump {
    generate_synthetic(&SynthSpec {
        head_count: 2,
        seq_len: 300,
        head_dim: 16,
        seed,
        causal,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn lookat_equals_attention_on_reconstructed_keys() {
    for causal in [true, false] {
        let dump = small_dump(3, causal);
        let cb = train_codebook(dump.keys.as_slice(), 16, &PqConfig::with_subspaces(4)).unwrap();
        let cache = encode_keys(&dump.keys, &cb).unwrap();
        let lk = lookat_attention(&dump, &cache, &cb).unwrap();
        let via_recon = attention_with_keys(&dump, &reconstruct(&cache, &cb).unwrap()).unwrap();
        let diff = lk
            .output
            .as_slice()
            .iter()
            .zip(via_recon.output.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(diff < 1e-5, "causal={causal}: {diff}");
    }
}

#[test]
fn softmax_rows_normalized_and_mask_exact() {
    let dump = small_dump(4, true);
    let cb = train_codebook(dump.keys.as_slice(), 16, &PqConfig::with_subspaces(2)).unwrap();
    let out = lookat_attention(&dump, &encode_keys(&dump.keys, &cb).unwrap(), &cb).unwrap();
    for h in 0..2 {
        for q in 0..300 {
            let row = out.weight_row(h, q);
            let sum: f64 = row.iter().map(|&x| x as f64).sum();
            assert!((sum - 1.0).abs() <= 1e-5);
            assert!(row[q + 1..].iter().all(|&w| w == 0.0));
        }
    }
}

#[test]
fn single_token_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = |rng: &mut ChaCha8Rng| Tensor3::from_vec([3, 1, 4], normal_vec(rng, 12)).unwrap();
    let dump = AttentionDump::new(t(&mut rng), t(&mut rng), t(&mut rng), "one", true).unwrap();
    let cb = Codebook::from_centroids(2, 1, 2, normal_vec(&mut rng, 4)).unwrap();
    let out = lookat_attention(&dump, &encode_keys(&dump.keys, &cb).unwrap(), &cb).unwrap();
    for h in 0..3 {
        assert_eq!(out.weight_row(h, 0), &[1.0]);
        assert_eq!(out.output.row(h, 0), dump.values.row(h, 0));
    }
}

#[test]
fn exact_codebook_preserves_argmax() {
    // Keys drawn from a small set of prototypes that the codebook holds exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let protos = normal_vec(&mut rng, 8 * 16);
    let keys: Vec<f32> = (0..200)
        .flat_map(|_| {
            let p = rng.gen_range(0..8);
            let s = rng.gen_range(0.5f32..2.0);
            protos[p * 16..(p + 1) * 16]
                .iter()
                .map(|x| x * s)
                .collect::<Vec<_>>()
        })
        .collect();
    let q = Tensor3::from_vec([1, 200, 16], normal_vec(&mut rng, 3200)).unwrap();
    let k = Tensor3::from_vec([1, 200, 16], keys.clone()).unwrap();
    let dump = AttentionDump::new(q, k, Tensor3::zeros([1, 200, 16]), "", false).unwrap();
    // Each distinct scaled subvector becomes its own centroid.
    let cb = train_codebook(
        &keys,
        16,
        &PqConfig {
            num_subspaces: 1,
            num_centroids: 200,
            ..PqConfig::default()
        },
    )
    .unwrap();
    let lk = lookat_attention(&dump, &encode_keys(&dump.keys, &cb).unwrap(), &cb).unwrap();
    let exact = reference_attention(&dump).unwrap();
    let argmax = |r: &[f32]| lookat::metrics::top_k_indices(r, 1)[0];
    for qi in 0..200 {
        assert_eq!(argmax(lk.score_row(0, qi)), argmax(exact.score_row(0, qi)));
    }
}

#[test]
fn op_count_follows_algorithm_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cb = random_codebook(&mut rng, 4, 256, 16);
    let c = query_op_count(512, &cb);
    assert_eq!(c.lut_macs, 4 * 256 * 16);
    assert_eq!(c.additions, 512 * 3);
    assert_eq!(c.lookups, 512 * 4);
}
