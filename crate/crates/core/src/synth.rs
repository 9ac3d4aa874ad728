//! Small synthetic mortality extract with known structure, laid out like a
//! WHO cause-of-death file, plus matching format and pipeline configs.
//!
//! Six countries in two groups of three: group A has rising lung cancer and
//! falling circulatory deaths, group B rising digestive and external deaths.
//! One country of group B is missing 1997-1998 for both sexes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::CauseClass;

pub const COUNTRIES: [&str; 6] = ["ARC", "BOR", "CYG", "DOR", "ERI", "FOR"];
pub const GAP_COUNTRY: &str = "FOR";
pub const GAP_YEARS: [i32; 2] = [1997, 1998];
pub const FIRST_YEAR: i32 = 1959;
pub const LAST_YEAR: i32 = 2015;

/// One in-scope code per class, then one code that no class covers.
fn codes(revision: u8) -> ([&'static str; 8], &'static str) {
    match revision {
        7 => (["A001", "A061", "A080", "A044", "A050", "A090", "A100", "A140"], "A135"),
        8 => (["A001", "A062", "A081", "A045", "A051", "A090", "A098", "A140"], "A120"),
        9 => (["B01", "B181", "B25", "B08", "B101", "B31", "B33", "B47"], "B46"),
        _ => (["A41", "E11", "I21", "C18", "C34", "J44", "K70", "X70"], "R99"),
    }
}

fn list_code(year: i32) -> (&'static str, u8) {
    match year {
        ..=1967 => ("07A", 7),
        1968..=1978 => ("08A", 8),
        1979..=1998 => ("09B", 9),
        _ => ("104", 10),
    }
}

const BASE: [f64; 8] = [30.0, 40.0, 600.0, 450.0, 180.0, 90.0, 120.0, 160.0];
/// Log-scale change over the whole window, per group and class.
const TREND: [[f64; 8]; 2] =
    [[-0.8, 0.6, -0.9, 0.1, 0.9, -0.3, -0.2, 0.0], [-0.6, 0.2, -0.3, 0.0, -0.4, -0.2, 0.7, 0.6]];
const AGE_SHARES: [f64; 3] = [0.15, 0.3, 0.55];

/// The record file as CSV text.
pub fn records_csv(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("Country,Year,List,Cause,Sex,Deaths35,Deaths45,Deaths55\n");
    // a malformed row outside the year window
    out.push_str("ARC,1958,07A,A001,1,NA,3,4\n");
    for (c, country) in COUNTRIES.iter().enumerate() {
        let group = c / 3;
        let size = 1.0 + 0.5 * c as f64;
        for year in FIRST_YEAR..=LAST_YEAR {
            if *country == GAP_COUNTRY && GAP_YEARS.contains(&year) {
                continue;
            }
            let s = f64::from(year - FIRST_YEAR) / f64::from(LAST_YEAR - FIRST_YEAR);
            let (list, revision) = list_code(year);
            let (class_codes, excluded) = codes(revision);
            for sex in [1u8, 2] {
                let sex_scale = if sex == 1 { 1.0 } else { 0.6 };
                for d in 0..CauseClass::ALL.len() {
                    let country_effect = 0.15 * ((c * 8 + d) as f64 * 1.7).sin();
                    let sex_effect = if sex == 2 && d == 4 { -0.4 } else { 0.0 };
                    let level = BASE[d]
                        * size
                        * sex_scale
                        * (TREND[group][d] * s + country_effect + sex_effect).exp();
                    write!(out, "{country},{year},{list},{},{sex}", class_codes[d]).unwrap();
                    for share in AGE_SHARES {
                        let noise = 1.0 + 0.08 * (rng.random::<f64>() - 0.5);
                        write!(out, ",{}", (level * share * noise).round() as u64).unwrap();
                    }
                    out.push('\n');
                }
                writeln!(out, "{country},{year},{list},{excluded},{sex},7,11,19").unwrap();
            }
        }
    }
    out
}

pub const FORMAT_TOML: &str = r#"[columns]
country = "Country"
year = "Year"
sex = "Sex"
revision = "List"
cause = "Cause"

[[age_bands]]
column = "Deaths35"
from = 35
to = 44

[[age_bands]]
column = "Deaths45"
from = 45
to = 54

[[age_bands]]
column = "Deaths55"
from = 55
to = 64
"#;

pub fn config_toml(repetitions: usize) -> String {
    let countries: Vec<String> = COUNTRIES.iter().map(|c| format!("\"{c}\"")).collect();
    format!(
        r#"sex = "both"
countries = [{}]

[paths]
data = ["records.csv"]
format = "format.toml"
output = "out"

[clustering]
repetitions = {repetitions}
master_seed = 7
"#,
        countries.join(", ")
    )
}

/// Writes `records.csv`, `format.toml` and `config.toml`; returns the config path.
pub fn write_fixture(dir: &Path, seed: u64, repetitions: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e)).map(|_| p)
    };
    write("records.csv", &records_csv(seed))?;
    write("format.toml", FORMAT_TOML)?;
    write("config.toml", &config_toml(repetitions))
}
