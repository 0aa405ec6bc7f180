use std::collections::{BTreeMap, HashMap};

use cvgl::mixer::{apply_ratio, expand_mix, mix, ratio_count, CorpusManifest, MixSpec, Sampling};
use cvgl::xbench::Language;
use proptest::prelude::*;

const LANGS: [Language; 2] = [Language::En, Language::Zh];

fn sources() -> Vec<CorpusManifest> {
    vec![
        CorpusManifest::synthetic("University-1652", "uav", 37_854, 54),
        CorpusManifest::synthetic("VIGOR", "panorama", 52_609, 1),
        CorpusManifest::synthetic("SetVL-480K", "street", 240_544, 1),
        CorpusManifest::synthetic("MAP", "map", 10_208, 1),
    ]
}

fn spec(entries: &[(&str, Sampling)]) -> MixSpec {
    MixSpec { seed: 7, datasets: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
}

#[test]
fn training_mix_counts() {
    let s = spec(&[
        ("University-1652", Sampling::Ratio(1.0)),
        ("VIGOR", Sampling::Ratio(1.0)),
        ("SetVL-480K", Sampling::Ratio(0.5)),
        ("MAP", Sampling::Ratio(4.0)),
    ]);
    let merged = mix(&sources(), &s).unwrap();
    let counts = merged.counts_by_dataset();
    assert_eq!(counts["SetVL-480K"], 120_272);
    assert_eq!(counts["MAP"], 40_832);
    assert_eq!(counts["University-1652"], 37_854);
    assert_eq!(counts["VIGOR"], 52_609);
    assert_eq!(merged.len(), 251_567);
}

#[test]
fn benchmark_expansion_counts() {
    let s = spec(&[
        ("University-1652", Sampling::Count(13_500)),
        ("VIGOR", Sampling::Count(13_500)),
        ("SetVL-480K", Sampling::Count(13_500)),
        ("MAP", Sampling::Ratio(1.0)),
    ]);
    let pairs = expand_mix(&sources(), &s, &LANGS).unwrap();
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    let mut labels: HashMap<(&str, u8), usize> = HashMap::new();
    for p in &pairs {
        *per.entry(p.dataset.as_str()).or_insert(0) += 1;
        *labels.entry((p.dataset.as_str(), p.gt_label)).or_insert(0) += 1;
    }
    assert_eq!(per["University-1652"], 54_000);
    assert_eq!(per["VIGOR"], 54_000);
    assert_eq!(per["SetVL-480K"], 54_000);
    assert_eq!(per["MAP"], 40_832);
    for (tag, n) in per {
        assert_eq!(labels[&(tag, 0)], n / 2);
        assert_eq!(labels[&(tag, 1)], n / 2);
    }
}

#[test]
fn ratio_one_is_identity() {
    let c = CorpusManifest::synthetic("VIGOR", "panorama", 500, 3);
    assert_eq!(apply_ratio(&c, 1.0, 99).unwrap(), c);
}

/// Round half to even on exact rationals `num / den`.
fn round_half_even(num: u128, den: u128) -> u128 {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q % 2),
    }
}

proptest! {
    #[test]
    fn ratio_count_law(n in 1usize..100_000, hundredths in 1u32..1_000) {
        // Ratios with two decimals, as written in mix specs.
        let r = hundredths as f64 / 100.0;
        let whole = (hundredths / 100) as u128;
        let frac = (hundredths % 100) as u128;
        let want = if hundredths <= 100 {
            round_half_even(hundredths as u128 * n as u128, 100)
        } else {
            whole * n as u128 + round_half_even(frac * n as u128, 100)
        };
        prop_assert_eq!(ratio_count(n, r).unwrap() as u128, want);
    }

    #[test]
    fn downsampling_keeps_relative_order(n in 1usize..400, hundredths in 1u32..100, seed in any::<u64>()) {
        let c = CorpusManifest::synthetic("MAP", "map", n, 2);
        let s = apply_ratio(&c, hundredths as f64 / 100.0, seed).unwrap();
        let pos: HashMap<&str, usize> = c.records().iter().enumerate().map(|(i, r)| (r.query_id.as_str(), i)).collect();
        let idx: Vec<usize> = s.records().iter().map(|r| pos[r.query_id.as_str()]).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&s, &apply_ratio(&c, hundredths as f64 / 100.0, seed).unwrap());
    }

    #[test]
    fn negatives_come_from_other_classes(n in 4usize..200, per in 1usize..4, seed in any::<u64>()) {
        let c = CorpusManifest::synthetic("VIGOR", "panorama", n, per);
        prop_assume!(n > per);
        let s = MixSpec { seed, datasets: [("VIGOR".to_string(), Sampling::Ratio(1.0))].into() };
        let pairs = expand_mix(std::slice::from_ref(&c), &s, &[Language::En]).unwrap();
        let class_of: HashMap<&str, &str> =
            c.records().iter().map(|r| (r.reference_id.as_str(), r.class_id.as_str())).collect();
        let query_class: HashMap<&str, &str> =
            c.records().iter().map(|r| (r.query_id.as_str(), r.class_id.as_str())).collect();
        for p in &pairs {
            let same = class_of[p.reference_id.as_str()] == query_class[p.query_id.as_str()];
            prop_assert_eq!(same, p.gt_label == 1);
        }
    }
}
