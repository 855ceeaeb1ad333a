//! Shared helpers for the integration tests: deterministic surrogate files
//! shaped like the two clinical datasets (used when the real files are not
//! supplied through the environment) and brute-force quadrature oracles for
//! the integrated leaf likelihoods.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Integer attribute concentrated near the low end of 1..=6.
fn low_attr<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let r: f64 = rng.random();
    1 + (r * r * 6.0) as u32
}

/// Integer attribute concentrated near the high end of 3..=10.
fn high_attr<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let r: f64 = rng.random();
    10 - (r * r * 7.0) as u32
}

/// Writes a deterministic stand-in for the original-format breast-cancer
/// file: 699 rows (458 benign, 241 malignant) with 16 rows carrying a '?'
/// in the bare-nuclei field (14 benign, 2 malignant), so the cleaned file
/// holds exactly 683 rows with 239 malignant. The bare-nuclei column is the
/// dominant discriminator with a 2% overlap per class; the other attributes
/// carry weaker, overlapping signal.
pub fn write_breast_cancer_surrogate(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBC_699);
    let mut labels = vec![false; 458];
    labels.extend(std::iter::repeat(true).take(241));
    labels.shuffle(&mut rng);

    let mut out = String::new();
    let mut benign_seen = 0usize;
    let mut malignant_seen = 0usize;
    for (i, &malignant) in labels.iter().enumerate() {
        let mut attrs: Vec<u32> = (0..9)
            .map(|_| if malignant { high_attr(&mut rng) } else { low_attr(&mut rng) })
            .collect();
        // Bare nuclei (attribute 6) separates the classes with a 2% overlap.
        let typical = rng.random::<f64>() < 0.98;
        attrs[5] = match (malignant, typical) {
            (false, true) | (true, false) => rng.random_range(1..=2),
            (false, false) | (true, true) => rng.random_range(5..=10),
        };
        // Missingness pattern: a fixed schedule over within-class ordinals.
        let missing = if malignant {
            malignant_seen += 1;
            malignant_seen % 100 == 0 && malignant_seen <= 200
        } else {
            benign_seen += 1;
            benign_seen % 30 == 0 && benign_seen <= 420
        };
        write!(out, "{}", 1_000_000 + i).unwrap();
        for (j, a) in attrs.iter().enumerate() {
            if j == 5 && missing {
                out.push_str(",?");
            } else {
                write!(out, ",{a}").unwrap();
            }
        }
        out.push_str(if malignant { ",4\n" } else { ",2\n" });
    }
    let path = dir.join("breast_cancer_surrogate.csv");
    std::fs::write(&path, out).expect("write surrogate file");
    path
}

/// The breast-cancer file to test against: the real file when the
/// BREAST_CANCER_DATA environment variable points at it, else a surrogate
/// written into `dir`.
pub fn breast_cancer_path(dir: &Path) -> PathBuf {
    match std::env::var_os("BREAST_CANCER_DATA") {
        Some(p) => PathBuf::from(p),
        None => write_breast_cancer_surrogate(dir),
    }
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, table: &[(&'a str, f64)]) -> &'a str {
    let mut u = rng.random::<f64>();
    for (value, w) in table {
        u -= w;
        if u <= 0.0 {
            return value;
        }
    }
    table.last().expect("non-empty table").0
}

const DIAG_CODES: [&str; 15] = [
    "250.01", "250.6", "401", "410", "414", "428", "486", "491", "599", "682", "715", "780",
    "786", "996", "V45",
];

/// Writes a deterministic stand-in for the hospital-readmission file:
/// 12,000 rows with the column mix the ingestion pipeline has to handle
/// (id columns, numerics, keepable categoricals, a 10-category column, two
/// dominant-category columns, a high-cardinality diagnosis column). The
/// readmission probability depends on prior inpatient visits, insulin use,
/// and length of stay.
pub fn write_diabetes_surrogate(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1AB_12000);
    let mut out = String::from(
        "encounter_id,patient_nbr,race,gender,age,weight,admission_type_id,\
         discharge_disposition_id,admission_source_id,time_in_hospital,num_lab_procedures,\
         num_procedures,num_medications,number_outpatient,number_emergency,number_inpatient,\
         number_diagnoses,max_glu_serum,A1Cresult,metformin,glipizide,examide,insulin,change,\
         diabetesMed,diag_1,readmitted\n",
    );
    for i in 0..12_000 {
        let race = pick(
            &mut rng,
            &[
                ("Caucasian", 0.74),
                ("AfricanAmerican", 0.18),
                ("Hispanic", 0.03),
                ("Other", 0.02),
                ("Asian", 0.01),
                ("?", 0.02),
            ],
        );
        let gender = if rng.random::<f64>() < 0.47 { "Male" } else { "Female" };
        let decade = 10 * rng.random_range(0..=9);
        let weight = if rng.random::<f64>() < 0.968 {
            "?"
        } else {
            pick(&mut rng, &[("[50-75)", 0.4), ("[75-100)", 0.4), ("[100-125)", 0.2)])
        };
        let time_in_hospital = {
            let r: f64 = rng.random();
            1 + (r * r * 13.0) as u32
        };
        let number_inpatient = if rng.random::<f64>() < 0.66 { 0 } else { rng.random_range(1..=8) };
        let insulin = pick(
            &mut rng,
            &[("No", 0.47), ("Steady", 0.31), ("Up", 0.12), ("Down", 0.10)],
        );
        let p_readmit = 0.10
            + if number_inpatient >= 1 { 0.22 } else { 0.0 }
            + if insulin != "No" { 0.08 } else { 0.0 }
            + if time_in_hospital >= 8 { 0.06 } else { 0.0 };
        let readmitted = if rng.random::<f64>() < p_readmit {
            "<30"
        } else if rng.random::<f64>() < 0.45 {
            ">30"
        } else {
            "NO"
        };
        writeln!(
            out,
            "{},{},{race},{gender},[{decade}-{}),{weight},{},{},{},{time_in_hospital},{},{},{},{},{},{number_inpatient},{},{},{},{},{},No,{insulin},{},{},{},{readmitted}",
            2_000_000 + i,
            90_000_000 + 7 * i,
            decade + 10,
            rng.random_range(1..=8),
            rng.random_range(1..=25),
            rng.random_range(1..=20),
            rng.random_range(1..=120),
            rng.random_range(0..=6),
            rng.random_range(1..=50),
            if rng.random::<f64>() < 0.85 { 0 } else { rng.random_range(1..=5) },
            if rng.random::<f64>() < 0.88 { 0 } else { rng.random_range(1..=4) },
            rng.random_range(3..=9),
            pick(&mut rng, &[("None", 0.92), ("Norm", 0.04), (">200", 0.02), (">300", 0.02)]),
            pick(&mut rng, &[("None", 0.83), ("Norm", 0.06), (">7", 0.05), (">8", 0.06)]),
            pick(&mut rng, &[("No", 0.80), ("Steady", 0.17), ("Up", 0.02), ("Down", 0.01)]),
            pick(&mut rng, &[("No", 0.965), ("Steady", 0.03), ("Up", 0.003), ("Down", 0.002)]),
            pick(&mut rng, &[("No", 0.54), ("Ch", 0.46)]),
            pick(&mut rng, &[("Yes", 0.77), ("No", 0.23)]),
            DIAG_CODES[rng.random_range(0..DIAG_CODES.len())],
        )
        .unwrap();
    }
    let path = dir.join("diabetes_surrogate.csv");
    std::fs::write(&path, out).expect("write surrogate file");
    path
}

/// The diabetes file to test against: the real file when DIABETES_DATA is
/// set, else a surrogate written into `dir`.
pub fn diabetes_path(dir: &Path) -> PathBuf {
    match std::env::var_os("DIABETES_DATA") {
        Some(p) => PathBuf::from(p),
        None => write_diabetes_surrogate(dir),
    }
}

/// Composite Simpson rule on [a, b] with `panels` (even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels >= 2 && panels % 2 == 0, "panels must be even");
    let h = (b - a) / panels as f64;
    let mut total = f(a) + f(b);
    for i in 1..panels {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * f(a + i as f64 * h);
    }
    total * h / 3.0
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Single-leaf Gaussian evidence by direct quadrature: the leaf mean is
/// integrated against its Normal prior.
pub fn gaussian_leaf_evidence_quadrature(ys: &[f64], sigma2: f64, m0: f64, v0: f64) -> f64 {
    let spread = sigma2.max(v0).sqrt();
    let lo = ys.iter().cloned().fold(m0, f64::min) - 12.0 * spread;
    let hi = ys.iter().cloned().fold(m0, f64::max) + 12.0 * spread;
    simpson(
        |mu| {
            let like: f64 = ys.iter().map(|&y| normal_pdf(y, mu, sigma2)).product();
            like * normal_pdf(mu, m0, v0)
        },
        lo,
        hi,
        40_000,
    )
}

/// Single-leaf Bernoulli evidence by direct quadrature: the success
/// probability is integrated against its Beta prior. Requires
/// `alpha >= 1` and `beta >= 1` so both integrands stay bounded at the
/// endpoints (`powf` returns the correct 0^0 = 1 there).
pub fn bernoulli_leaf_evidence_quadrature(n: u32, successes: u32, alpha: f64, beta: f64) -> f64 {
    let s = successes as f64;
    let f = (n - successes) as f64;
    assert!(alpha >= 1.0 && beta >= 1.0, "integrands must stay bounded");
    let beta_norm = simpson(
        |p| p.powf(alpha - 1.0) * (1.0 - p).powf(beta - 1.0),
        0.0,
        1.0,
        200_000,
    );
    let joint = simpson(
        |p| p.powf(s + alpha - 1.0) * (1.0 - p).powf(f + beta - 1.0),
        0.0,
        1.0,
        200_000,
    );
    joint / beta_norm
}
