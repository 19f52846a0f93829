#![allow(dead_code)]

use std::fs;
use std::path::Path;

use dpfair::{AttributeDomain, EncodedDatabase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_SCHEMA: &str = r#"{"attributes":[
    {"name":"sex","kind":"categorical","levels":["Male","Female"]},
    {"name":"age","kind":"numeric","bin_edges":[18,25,45,80]},
    {"name":"priors","kind":"categorical","levels":["0","1","2+"]},
    {"name":"charge","kind":"categorical","levels":["F","M"]},
    {"name":"recid","kind":"categorical","levels":["0","1"]}
]}"#;

/// Rows as CSV text with correlated columns, drawn deterministically.
pub fn fixture_csv(seed: u64, rows: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("id,sex,age,priors,charge,recid\n");
    for i in 0..rows {
        let female = rng.random_bool(0.25);
        let age: u32 = rng.random_range(18..=80);
        let young = age < 30;
        let priors = if rng.random_bool(if young { 0.5 } else { 0.3 }) { 0 } else if rng.random_bool(0.5) { 1 } else { 2 };
        let felony = rng.random_bool(0.4 + 0.1 * priors as f64);
        let p = 0.15 + 0.2 * priors as f64 + if young { 0.15 } else { 0.0 } - if female { 0.1 } else { 0.0 };
        let recid = rng.random_bool(p.clamp(0.01, 0.99));
        out.push_str(&format!(
            "{i},{},{age},{},{},{}\n",
            if female { "Female" } else { "Male" },
            ["0", "1", "2+"][priors],
            if felony { "F" } else { "M" },
            u8::from(recid)
        ));
    }
    out
}

pub fn fixture_domains() -> Vec<AttributeDomain> {
    dpfair::dataset::parse_schema(FIXTURE_SCHEMA).unwrap()
}

pub fn fixture_db(seed: u64, rows: usize) -> EncodedDatabase {
    dpfair::dataset::encode_reader(fixture_csv(seed, rows).as_bytes(), &fixture_domains(), &[]).unwrap()
}

/// Writes schema.json, data.csv and a config.json using them.
pub fn write_fixture(dir: &Path, rows: usize, extra: &str) {
    fs::write(dir.join("schema.json"), FIXTURE_SCHEMA).unwrap();
    fs::write(dir.join("data.csv"), fixture_csv(7, rows)).unwrap();
    let config = format!(
        r#"{{
        "schema": "schema.json",
        "data": "data.csv",
        "protected": {{"attribute": "sex", "op": "eq", "value": "Female"}},
        "ground_truth": {{"attribute": "recid", "op": "eq", "value": "1"}},
        "output_dir": "out"{extra}
    }}"#
    );
    fs::write(dir.join("config.json"), config).unwrap();
}

/// Small categorical database with the given cardinalities.
pub fn categorical_db(cards: &[usize], rows: &[Vec<u32>]) -> EncodedDatabase {
    let domains = cards
        .iter()
        .enumerate()
        .map(|(i, &k)| AttributeDomain::categorical(format!("a{i}"), (0..k).map(|l| format!("l{l}"))).unwrap())
        .collect();
    EncodedDatabase::from_rows(domains, rows).unwrap()
}

/// Same schema as [`fixture_db`], but drawn from a tree-shaped distribution
/// (sex → recid → priors → {age, charge}) that a tree model can represent.
pub fn tree_fixture_db(seed: u64, rows: usize) -> EncodedDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, p: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i as u32;
            }
        }
        (p.len() - 1) as u32
    };
    let coded: Vec<Vec<u32>> = (0..rows)
        .map(|_| {
            let sex = pick(&mut rng, &[0.7, 0.3]);
            let recid = pick(&mut rng, if sex == 0 { &[0.5, 0.5] } else { &[0.7, 0.3] });
            let priors = pick(&mut rng, if recid == 0 { &[0.6, 0.25, 0.15] } else { &[0.2, 0.3, 0.5] });
            let age = pick(&mut rng, [[0.2, 0.5, 0.3], [0.3, 0.5, 0.2], [0.45, 0.45, 0.1]][priors as usize].as_slice());
            let charge = pick(&mut rng, [[0.3, 0.7], [0.5, 0.5], [0.7, 0.3]][priors as usize].as_slice());
            vec![sex, age, priors, charge, recid]
        })
        .collect();
    EncodedDatabase::from_rows(fixture_domains(), &coded).unwrap()
}
