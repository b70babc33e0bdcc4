//! Seeded surrogates for the Blood Transfusion and Adult files.
//!
//! The generators reproduce the file layouts and rough marginal shapes (ranges,
//! skew, zero inflation), not the real joint distributions. Output is a function
//! of the seed only.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal};

pub const BLOOD_ROWS: usize = 748;
pub const ADULT_ROWS: usize = 48_842;

pub const BLOOD_HEADER: &str =
    "Recency (months),Frequency (times),Monetary (c.c. blood),Time (months),\"whether he/she donated blood in March 2007\"";

/// Blood-like table: 748 rows, `Monetary = 250 * Frequency`, `Time >= Recency`.
pub fn blood_like_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recency = Gamma::<f64>::new(1.3, 7.3).expect("valid gamma");
    let freq = Gamma::<f64>::new(1.2, 4.6).expect("valid gamma");
    let span = Exp::<f64>::new(1.0 / 24.0).expect("valid exp");
    let mut out = String::with_capacity(BLOOD_ROWS * 24);
    out.push_str(BLOOD_HEADER);
    out.push('\n');
    for _ in 0..BLOOD_ROWS {
        // two visible groups: recent frequent donors and lapsed ones
        let lapsed = rng.random_bool(0.7);
        let r = if lapsed {
            recency.sample(&mut rng) + 4.0
        } else {
            recency.sample(&mut rng) * 0.4
        };
        let r = (r.round() as i64).clamp(0, 74);
        let f = if lapsed {
            freq.sample(&mut rng) * 0.7
        } else {
            freq.sample(&mut rng) * 1.8 + 2.0
        };
        let f = (f.round() as i64).clamp(1, 50);
        let t = r + 2 + (span.sample(&mut rng) + 2.0 * f as f64).round() as i64;
        let t = t.clamp(r.max(2), 98);
        let p_donate = if lapsed { 0.12 } else { 0.45 };
        let y = u8::from(rng.random_bool(p_donate));
        writeln!(out, "{r},{f},{},{t},{y}", 250 * f).expect("write to string");
    }
    out
}

const WORKCLASS: &[&str] = &[
    "Private",
    "Self-emp-not-inc",
    "Self-emp-inc",
    "Federal-gov",
    "Local-gov",
    "State-gov",
    "?",
];
const EDUCATION: &[&str] = &[
    "Preschool",
    "1st-4th",
    "5th-6th",
    "7th-8th",
    "9th",
    "10th",
    "11th",
    "12th",
    "HS-grad",
    "Some-college",
    "Assoc-voc",
    "Assoc-acdm",
    "Bachelors",
    "Masters",
    "Prof-school",
    "Doctorate",
];
const MARITAL: &[&str] = &[
    "Married-civ-spouse",
    "Never-married",
    "Divorced",
    "Separated",
    "Widowed",
];
const OCCUPATION: &[&str] = &[
    "Prof-specialty",
    "Craft-repair",
    "Exec-managerial",
    "Adm-clerical",
    "Sales",
    "Other-service",
    "?",
];
const RELATIONSHIP: &[&str] = &["Husband", "Not-in-family", "Own-child", "Unmarried", "Wife"];
const RACE: &[(&str, f64)] = &[
    ("White", 0.855),
    ("Black", 0.096),
    ("Asian-Pac-Islander", 0.031),
    ("Amer-Indian-Eskimo", 0.01),
    ("Other", 0.008),
];
const COUNTRY: &[&str] = &["United-States", "Mexico", "Philippines", "Germany", "?"];

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn pick_weighted<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, f64)]) -> &'a str {
    let mut u: f64 = rng.random();
    for (name, w) in items {
        if u < *w {
            return name;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

/// Adult-like table in the `adult.data` layout (no header, `", "` separated).
pub fn adult_like_csv(seed: u64, n_rows: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = Gamma::<f64>::new(4.5, 8.5).expect("valid gamma");
    let fnlwgt = LogNormal::<f64>::new(12.0, 0.55).expect("valid lognormal");
    let hours = Normal::<f64>::new(40.0, 11.0).expect("valid normal");
    let gain = LogNormal::<f64>::new(8.4, 1.0).expect("valid lognormal");
    let loss = Normal::<f64>::new(1870.0, 360.0).expect("valid normal");
    let edu = Normal::<f64>::new(9.0, 2.5).expect("valid normal");
    let mut out = String::with_capacity(n_rows * 110);
    for _ in 0..n_rows {
        let a = ((age.sample(&mut rng) + 14.0).round() as i64).clamp(17, 90);
        let w = (fnlwgt.sample(&mut rng).round() as i64).clamp(12_285, 1_490_400);
        let edu_num = (edu.sample(&mut rng).round() as i64).clamp(1, 16);
        let edu_name = EDUCATION[(edu_num - 1) as usize];
        let high_income = rng.random_bool((0.08 + 0.03 * (edu_num as f64 - 9.0).max(0.0)).min(0.9));
        let g = if rng.random_bool(if high_income { 0.2 } else { 0.05 }) {
            (gain.sample(&mut rng).round() as i64).clamp(114, 99_999)
        } else {
            0
        };
        let l = if g == 0 && rng.random_bool(0.047) {
            (loss.sample(&mut rng).round() as i64).clamp(155, 4_356)
        } else {
            0
        };
        let h = (hours.sample(&mut rng).round() as i64).clamp(1, 99);
        writeln!(
            out,
            "{a}, {}, {w}, {edu_name}, {edu_num}, {}, {}, {}, {}, {}, {g}, {l}, {h}, {}, {}",
            pick(&mut rng, WORKCLASS),
            pick(&mut rng, MARITAL),
            pick(&mut rng, OCCUPATION),
            pick(&mut rng, RELATIONSHIP),
            pick_weighted(&mut rng, RACE),
            if rng.random_bool(0.67) {
                "Male"
            } else {
                "Female"
            },
            pick(&mut rng, COUNTRY),
            if high_income { ">50K" } else { "<=50K" },
        )
        .expect("write to string");
    }
    out
}
