//! Writes the bundled 1008-pair-per-language scoring fixture.
//!
//! Usage: `cargo run -p cvgl-core --example gen_xbench_fixture -- <out-dir>`
//!
//! Correct-answer counts per (language, dataset, polarity) are fixed by
//! `CORRECT` below; which samples are wrong, and how the explanations
//! overlap with their references, is drawn from seeded streams.

use std::path::PathBuf;

use cvgl::jsonl::write_jsonl;
use cvgl::seed::{rng_for, Stream};
use cvgl::xbench::{DatasetTag, Language, PredictionRecord, ReferenceRecord};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;

const SEED: u64 = 20_240_504;

/// Queries per dataset, in `DatasetTag::ALL` order.
const QUERIES: [usize; 4] = [128, 126, 127, 123];

/// Correct (positive, negative) answers per language and dataset.
const CORRECT: [[(usize, usize); 4]; 2] = [
    [(94, 125), (55, 106), (113, 125), (95, 106)],
    [(92, 127), (60, 118), (122, 122), (94, 108)],
];

const EN_MATCH: &[&str] = &[
    "The road network in the query matches the satellite layout.",
    "Both images show the same curved junction near the centre.",
    "Building footprints along the main street line up.",
    "The river bend appears in the same position in both views.",
    "A large parking lot sits north of the central block in each image.",
    "The roundabout and its four exits are consistent.",
    "Tree rows along the avenue follow the same direction.",
    "The stadium roof shape is visible from both viewpoints.",
    "The rail line crosses the scene at the same angle.",
    "Rooftop colours and spacing agree across the pair.",
    "The park boundary traces an identical outline.",
    "A bridge spans the canal at the same location.",
];

const EN_MISMATCH: &[&str] = &[
    "The road network in the query does not appear in the satellite image.",
    "The query shows a dense block while the reference is mostly farmland.",
    "No river is visible in the reference although the query has one.",
    "Street orientation differs by roughly ninety degrees.",
    "The reference lacks the roundabout seen in the query.",
    "Building heights and density are inconsistent.",
    "The coastline in the reference has no counterpart in the query.",
    "The query contains a rail yard that the reference does not.",
    "Vegetation patterns differ between the two views.",
    "The reference shows a highway interchange missing from the query.",
    "Parking areas are arranged differently in each image.",
    "The park in the query has a different shape from any in the reference.",
];

const ZH_MATCH: &[&str] = &[
    "查询图像中的道路网络与卫星图布局一致。",
    "两幅图像在中心附近都有相同的弯曲路口。",
    "主街两侧的建筑轮廓相互对应。",
    "河流弯道在两个视角中的位置相同。",
    "两幅图中中央街区北侧都有大型停车场。",
    "环岛及其四个出口保持一致。",
    "林荫道两旁的树列方向相同。",
    "体育场屋顶的形状在两个视角中均可见。",
    "铁路线以相同角度穿过画面。",
    "屋顶颜色和间距在两幅图中吻合。",
    "公园边界的轮廓完全相同。",
    "运河上的桥梁位于同一位置。",
];

const ZH_MISMATCH: &[&str] = &[
    "查询图像中的道路网络在卫星图中没有出现。",
    "查询图像是密集街区而参考图主要是农田。",
    "参考图中看不到河流而查询图像中有。",
    "街道朝向相差大约九十度。",
    "参考图缺少查询图像中的环岛。",
    "建筑高度和密度不一致。",
    "参考图中的海岸线在查询图像中没有对应。",
    "查询图像包含参考图中没有的铁路货场。",
    "两个视角的植被分布不同。",
    "参考图中的高速立交在查询图像中缺失。",
    "两幅图的停车区域布局不同。",
    "查询图像中的公园形状与参考图不同。",
];

const NON_ANSWERS: &[&str] = &[
    "I cannot determine whether these images show the same place.",
    "The images are too blurry to compare.",
    "无法判断这两幅图像是否为同一地点。",
];

fn bank(language: Language, label: u8) -> &'static [&'static str] {
    match (language, label) {
        (Language::En, 1) => EN_MATCH,
        (Language::En, _) => EN_MISMATCH,
        (Language::Zh, 1) => ZH_MATCH,
        (Language::Zh, _) => ZH_MISMATCH,
    }
}

fn join(language: Language, parts: &[&str]) -> String {
    parts.join(if language == Language::En { " " } else { "" })
}

/// A reference of four clauses and an answer that keeps `keep` of them.
fn texts(language: Language, gt: u8, answer: u8, rng: &mut impl Rng) -> (String, String) {
    let own = bank(language, gt);
    let picked: Vec<&str> = index::sample(rng, own.len(), 4).iter().map(|i| own[i]).collect();
    let reference = join(language, &picked);
    let keep = *[0usize, 1, 2, 2, 3, 3, 3, 4, 4, 4].choose(rng).unwrap();
    let pool = bank(language, answer);
    let mut parts: Vec<&str> = picked[..keep].to_vec();
    let mut fillers: Vec<&str> = pool.iter().copied().filter(|s| !picked.contains(s)).collect();
    fillers.shuffle(rng);
    parts.extend(fillers.into_iter().take(4 - keep));
    (reference, join(language, &parts))
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/tests/fixtures/xbench".into()));
    std::fs::create_dir_all(&out).expect("create output dir");
    let mut predictions = Vec::new();
    let mut references = Vec::new();

    for (li, language) in Language::ALL.into_iter().enumerate() {
        for (di, dataset) in DatasetTag::ALL.into_iter().enumerate() {
            let n = QUERIES[di];
            let stream = (li * 4 + di) as u32;
            let mut rng = rng_for(SEED, Stream::Fixture, stream);
            let (pos_ok, neg_ok) = CORRECT[li][di];
            let correct_pos = index::sample(&mut rng, n, pos_ok).into_vec();
            let correct_neg = index::sample(&mut rng, n, neg_ok).into_vec();
            for q in 0..n {
                for (gt, polarity, correct) in [(1u8, "pos", &correct_pos), (0u8, "neg", &correct_neg)] {
                    let id = format!("{}/{q}/{polarity}/{}", dataset.name(), language.code());
                    let is_correct = correct.contains(&q);
                    let answer = if is_correct { gt } else { 1 - gt };
                    let (reference, explanation) = texts(language, gt, answer, &mut rng);
                    let roll: f64 = rng.random();
                    let raw_text = if !is_correct && roll < 0.15 {
                        NON_ANSWERS[rng.random_range(0..NON_ANSWERS.len())].to_string()
                    } else if roll > 0.99 {
                        format!("[[{answer}]]")
                    } else {
                        format!("[[{answer}]]\n\n{explanation}")
                    };
                    predictions.push(PredictionRecord { id: id.clone(), dataset, language, gt_label: gt, raw_text });
                    references.push(ReferenceRecord { id, reference_explanation: reference });
                }
            }
        }
    }
    write_jsonl(&predictions, out.join("predictions.jsonl")).expect("write predictions");
    write_jsonl(&references, out.join("references.jsonl")).expect("write references");
    println!("wrote {} predictions to {}", predictions.len(), out.display());
}
