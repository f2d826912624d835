//! Shared test fixtures: synthetic corpora in three scripts and a small
//! config builder for CLI runs.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn zipf_pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], s: f64) -> &'a T {
    let weights: Vec<f64> = (0..items.len()).map(|i| 1.0 / ((i + 1) as f64).powf(s)).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen_range(0.0..total);
    for (item, w) in items.iter().zip(&weights) {
        if r < *w {
            return item;
        }
        r -= w;
    }
    items.last().unwrap()
}

/// High-resource Latin-script language: a broad word inventory keeps a
/// shared vocabulary under genuine capacity pressure.
pub fn latin_lines(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syllables = [
        "ta", "re", "mo", "li", "sun", "ber", "cal", "dor", "vin", "mar", "sel", "ton", "gra",
        "fel", "nor", "pis", "lu", "den", "sor", "mi", "val", "ke",
    ];
    let mut words = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    while words.len() < 300 {
        let len = rng.gen_range(2..=4);
        let w: String = (0..len).map(|_| *zipf_pick(&mut rng, &syllables, 0.6)).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    (0..n)
        .map(|_| {
            let k = rng.gen_range(5..=8);
            (0..k)
                .map(|_| zipf_pick(&mut rng, &words, 1.15).as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Dense CJK-like script: compound words, no spaces between them. The
/// character inventory stays comfortably below the ladder floors used in
/// tests (the protected set must fit in the smallest trained size).
pub fn cjk_lines(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x636a6b));
    let chars: Vec<char> = (0..60)
        .map(|_| char::from_u32(0x4E00 + rng.gen_range(0..3000)).unwrap())
        .collect();
    let mut compounds = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    while compounds.len() < 350 {
        let len = rng.gen_range(1..=3);
        let c: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
        if seen.insert(c.clone()) {
            compounds.push(c);
        }
    }
    (0..n)
        .map(|_| {
            let k = rng.gen_range(5..=8);
            (0..k)
                .map(|_| zipf_pick(&mut rng, &compounds, 1.0).as_str())
                .collect::<String>()
        })
        .collect()
}

/// Low-resource agglutinative language: Cyrillic stems with chained
/// suffixes. Few lines, but high morphological diversity, so capacity spent
/// on its morphemes pays off where a shared vocabulary starves it.
pub fn agglutinative_lines(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x616767));
    let stems = [
        "кол", "мар", "тев", "сол", "нир", "пал", "рек", "зов", "лим", "бар", "гун", "дол",
        "вер", "сат", "мол", "кир", "туз", "наб", "шер", "фும", "хал", "циг", "жад", "юрг",
        "эск", "ыйм", "бяз", "влоч", "грам", "дюс", "изор", "квен", "лярд", "мыч", "нюг",
        "овет", "прам", "рюх", "сып", "тёж",
    ];
    let suffixes = [
        "ов", "ек", "тар", "мин", "ли", "ат", "ур", "ем", "ис", "он", "ыл", "яр", "еш", "ук",
    ];
    (0..n)
        .map(|_| {
            let k = rng.gen_range(5..=8);
            (0..k)
                .map(|_| {
                    let mut w = zipf_pick(&mut rng, &stems, 0.7).to_string();
                    for _ in 0..rng.gen_range(2..=4) {
                        w.push_str(zipf_pick(&mut rng, &suffixes, 0.6));
                    }
                    w
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

/// Writes a 3-language corpus set plus a small pipeline config into `dir`,
/// returning the config path.
pub fn small_three_language_setup(dir: &Path, seed: u64) -> std::path::PathBuf {
    let corpora = dir.join("corpora");
    fs::create_dir_all(&corpora).unwrap();
    write_lines(&corpora.join("lat.txt"), &latin_lines(seed, 600));
    write_lines(&corpora.join("cjk.txt"), &cjk_lines(seed, 350));
    write_lines(&corpora.join("agg.txt"), &agglutinative_lines(seed, 140));
    let config = serde_json::json!({
        "languages": [
            {"code": "lat", "corpus": "corpora/lat.txt"},
            {"code": "cjk", "corpus": "corpora/cjk.txt"},
            {"code": "agg", "corpus": "corpora/agg.txt"}
        ],
        "per_language_vocab_size": 120,
        "temperature": 2.0,
        "total_lines": 900,
        "capacity": 520,
        "k": 3,
        "chunk": 40,
        "floor": 80,
        "seed": seed,
        "kmeans_restarts": 3,
        "ladder_sizes": [80, 200, 360],
        "trainer": {"max_token_len": 10, "min_count": 2}
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_multivocab")
}
