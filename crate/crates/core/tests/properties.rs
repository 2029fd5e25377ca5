use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;

use infrasight::data::{make_splits, synth_generate, RasterPatch, Source, SplitMode, SynthSpec};
use infrasight::experiment::{ExperimentConfig, KeyValues};
use infrasight::metrics::{auroc, simple_matching_coefficient, spearman};
use infrasight::nn::Checkpoint;
use infrasight::tensor::Tensor;

/// Scores on a coarse grid (so ties are common) with both classes present.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0 - 1.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut y)| {
                y[0] = true;
                y[1] = false;
                (s, y)
            })
    })
}

proptest! {
    #[test]
    fn auroc_ignores_monotone_transforms((s, y) in scored_labels(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auroc(&s, &y).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let cubed: Vec<f64> = s.iter().map(|v| v * v * v).collect();
        prop_assert!((auroc(&affine, &y).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&cubed, &y).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn auroc_complements((s, y) in scored_labels()) {
        let base = auroc(&s, &y).unwrap();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        prop_assert!((auroc(&neg, &y).unwrap() + base - 1.0).abs() < 1e-12);
        prop_assert!((auroc(&s, &flipped).unwrap() + base - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn smc_is_symmetric(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80)) {
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let ab = simple_matching_coefficient(&a, &b).unwrap();
        prop_assert_eq!(ab, simple_matching_coefficient(&b, &a).unwrap());
        prop_assert_eq!(simple_matching_coefficient(&a, &a).unwrap(), 1.0);
        let not_b: Vec<bool> = b.iter().map(|v| !v).collect();
        prop_assert!((simple_matching_coefficient(&a, &not_b).unwrap() + ab - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_of_monotone_map_is_one(x in prop::collection::vec(-100.0f64..100.0, 3..40)) {
        let y: Vec<f64> = x.iter().map(|v| v * v * v + v).collect();
        let r = spearman(&x, &y).unwrap();
        prop_assert!((r - 1.0).abs() < 1e-9 || x.iter().all(|v| *v == x[0]), "{r}");
    }

    #[test]
    fn raster_round_trip(
        (bands, h, w) in (1usize..4, 1usize..6, 1usize..6),
        bits in prop::collection::vec(any::<u32>(), 100),
        lat in -90.0f64..90.0,
        lon in -180.0f64..180.0,
    ) {
        let pixels: Vec<f32> = (0..bands * h * w)
            .map(|i| f32::from_bits(bits[i % bits.len()]))
            .map(|v| if v.is_finite() { v } else { 1.5 })
            .collect();
        let mut p = RasterPatch::new(Source::Synthetic, bands, h, w, pixels).unwrap();
        p.center_lat = lat;
        p.center_lon = lon;
        let back = RasterPatch::from_bytes(&p.to_bytes().unwrap()).unwrap();
        prop_assert!(back.pixels.iter().zip(&p.pixels).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!((back.bands, back.height, back.width), (bands, h, w));
        prop_assert_eq!(back.center_lat.to_bits(), lat.to_bits());
        prop_assert_eq!(back.center_lon.to_bits(), lon.to_bits());
    }

    #[test]
    fn checkpoint_round_trip(
        shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 1..5),
        seed in any::<u32>(),
        meta in prop::collection::btree_map("[a-z_]{1,8}", "[ -~]{0,12}", 0..4),
    ) {
        let mut ckpt = Checkpoint::new();
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|j| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(j as u32 * 97 + i as u32) & 0x7f7f_ffff)).collect();
            ckpt.entries.insert(format!("layer{i}.weight"), Tensor::new(shape.clone(), data).unwrap());
        }
        ckpt.metadata = meta;
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.metadata, ckpt.metadata);
        for (k, t) in &ckpt.entries {
            let b = &back.entries[k];
            prop_assert_eq!(b.shape(), t.shape());
            prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn config_hash_ignores_layout(pad in prop::collection::vec(0usize..3, 8), comment in "[a-z ]{0,10}", seed in any::<u16>()) {
        let sp = |i: usize| " ".repeat(pad[i]);
        let tidy = "epochs = 3\nlr = 0.01\nfolds = 4\n";
        let messy = format!(
            "# {comment}\n{}epochs{}={}3\n\n{}lr={}0.01   # {comment}\nfolds{}={}4\nseed = {seed}\n",
            sp(0), sp(1), sp(2), sp(3), sp(4), sp(5), sp(6)
        );
        let hash = |text: &str| {
            let kv = KeyValues::parse(text, "t", Path::new("/d")).unwrap();
            ExperimentConfig::from_key_values(&kv).unwrap().config_hash()
        };
        prop_assert_eq!(hash(tidy), hash(&messy));
        prop_assert_ne!(hash(tidy), hash("epochs = 3\nlr = 0.02\nfolds = 4\n"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_never_share_geocodes(seed in any::<u64>(), k in 2usize..8, rate in 0.0f64..0.8, fraction in 0.0f64..=0.8) {
        let spec = SynthSpec { n: 120, side: 1, shared_geocode_rate: rate, ..SynthSpec::default() };
        let records = synth_generate(&spec, seed % 1000).unwrap().records;
        let geo = |idx: &[usize]| idx.iter().map(|&i| records[i].geocode.clone()).collect::<BTreeSet<_>>();

        let split = make_splits(&records, k, seed, SplitMode::KFold).unwrap();
        let mut covered = 0;
        for f in 0..k {
            let (tr, te) = split.round(&records, f);
            prop_assert!(geo(&tr).is_disjoint(&geo(&te)));
            covered += te.len();
        }
        prop_assert_eq!(covered, records.len());

        let mode = SplitMode::Fraction { country: "Tanzania".into(), fraction, stratify_by: Some(0) };
        let split = make_splits(&records, 3, seed, mode).unwrap();
        let parts: Vec<BTreeSet<String>> = (0..3).map(|f| geo(&split.indices_in(&records, f))).collect();
        prop_assert!(parts[0].is_disjoint(&parts[1]) && parts[0].is_disjoint(&parts[2]) && parts[1].is_disjoint(&parts[2]));
        let country: BTreeSet<String> = records.iter().filter(|r| r.country == "Tanzania").map(|r| r.geocode.clone()).collect();
        let tuned_and_tested: BTreeSet<String> = parts[1].union(&parts[2]).cloned().collect();
        prop_assert_eq!(tuned_and_tested, country);
    }
}
