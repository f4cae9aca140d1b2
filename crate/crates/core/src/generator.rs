//! Hospital-discharge-like ground truth.
//!
//! Thirteen features with the category counts of a public patient discharge
//! extract (type of care, age, sex, ethnicity, race, zip code, length of
//! stay, disposition, payer, charge, diagnostic category, severity and
//! medical/surgical code). Records come from a fixed-seed structured model:
//! demographics first, then care type and diagnosis, then severity, length of
//! stay and charge drawn as latent numbers and binned.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::data::{bin_numeric, Category, Dataset, FeatureSpec, Schema, NA_LABEL};
use crate::rng::{sample_categorical, substream, Purpose, StreamRng};

/// Seed of the model structure; also the default row seed.
pub const DEFAULT_SEED: u64 = 2011;

pub const TYP: usize = 0;
pub const AGE: usize = 1;
pub const SEX: usize = 2;
pub const ETHNCTY: usize = 3;
pub const RACE: usize = 4;
pub const PATZIP: usize = 5;
pub const LOS: usize = 6;
pub const DISP: usize = 7;
pub const PAY: usize = 8;
pub const CHARGE: usize = 9;
pub const MDC: usize = 10;
pub const SEV: usize = 11;
pub const CAT: usize = 12;

const LOS_EDGES: [f64; 14] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 30.0, 50.0, 70.0, 90.0];
const CHARGE_EDGES: [f64; 23] = [
    2e3, 4e3, 6e3, 8e3, 10e3, 12.5e3, 15e3, 17.5e3, 20e3, 25e3, 30e3, 35e3, 40e3, 45e3, 50e3, 55e3, 60e3, 65e3, 70e3,
    75e3, 80e3, 90e3, 100e3,
];

fn cat(name: &str, labels: &[&str]) -> FeatureSpec {
    FeatureSpec::categorical(name, labels.iter().copied()).expect("static labels are valid")
}

fn with_na(mut labels: Vec<String>) -> Vec<String> {
    labels.push(NA_LABEL.to_string());
    labels
}

/// Lower bin edges as representatives, matching the labels; NA has none.
fn lower_edges(edges: &[f64]) -> Vec<Option<f64>> {
    let mut reps = vec![Some(0.0)];
    reps.extend(edges.iter().map(|&e| Some(e)));
    reps.push(None);
    reps
}

fn kilo(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v % 1000.0 == 0.0 {
        format!("{}K", v / 1000.0)
    } else {
        format!("{:.1}K", v / 1000.0)
    }
}

/// Schema of the generated data, in the column order of the discharge
/// extract.
pub fn hospital_schema() -> Schema {
    let age_edges: Vec<f64> = (1..=16).map(|k| 5.0 * k as f64).collect();
    let age_labels = with_na((0..=16).map(|k| (5 * k).to_string()).collect());
    let mut age_reps: Vec<Option<f64>> = (0..=16).map(|k| Some(5.0 * k as f64)).collect();
    age_reps.push(None);

    let mut los_labels: Vec<String> = (0..10).map(|d| d.to_string()).collect();
    los_labels.extend(["10-30", "30-50", "50-70", "70-90", "90+"].map(String::from));

    let mut charge_labels: Vec<String> = std::iter::once(0.0).chain(CHARGE_EDGES[..22].iter().copied()).map(kilo).collect();
    charge_labels.push("100K+".into());

    let zips = [
        "900xx", "902xx", "903xx", "904xx", "905xx", "906xx", "907xx", "908xx", "910xx", "911xx", "912xx", "913xx",
        "914xx", "915xx", "916xx", "935xx",
    ];
    let mdc: Vec<String> = (1..=25).map(|k| k.to_string()).collect();

    Schema::new(vec![
        cat(
            "typ",
            &["Acute Care", "Skilled Nursing", "Psychiatric", "Chemical Dependency", "Physical Rehab", "Other"],
        ),
        FeatureSpec::binned("age.yrs", age_labels, age_edges, Some(age_reps)).expect("age spec"),
        cat("sex", &["Male", "Female", NA_LABEL]),
        cat("ethncty", &["Hispanic", "Non-Hispanic", "Unknown", NA_LABEL]),
        cat(
            "race",
            &["White", "Black", "Native American", "Asian", "Pacific Islander", "Other", "Unknown"],
        ),
        cat("patzip", &zips),
        FeatureSpec::binned("los", with_na(los_labels), LOS_EDGES.to_vec(), Some(lower_edges(&LOS_EDGES))).expect("los spec"),
        cat(
            "disp",
            &[
                "Routine",
                "Acute Care",
                "Other Care",
                "Skilled Nursing",
                "Residential Care",
                "Prison/Jail",
                "Against Medical Advice",
                "Died",
                "Other",
                "Home Health",
                "Hospice",
                "Inpatient Rehab",
                "Unknown",
            ],
        ),
        cat(
            "pay",
            &[
                "Medicare",
                "Medi-Cal",
                "Private",
                "Workers Comp",
                "County Indigent",
                "Other Government",
                "Other Indigent",
                "Self Pay",
                "Other",
            ],
        ),
        FeatureSpec::binned(
            "charge",
            with_na(charge_labels),
            CHARGE_EDGES.to_vec(),
            Some(lower_edges(&CHARGE_EDGES)),
        )
        .expect("charge spec"),
        FeatureSpec::categorical("MDC", mdc).expect("mdc spec"),
        cat("sev", &["0", "1", "2"]),
        cat("cat", &["M", "S"]),
    ])
    .expect("hospital schema is valid")
}

/// Random effects of the structured model, fixed by [`DEFAULT_SEED`].
#[derive(Debug, Clone)]
pub struct HospitalModel {
    schema: Arc<Schema>,
    zip_by_race: Vec<Vec<f64>>,
    pay_base: Vec<f64>,
    pay_by_race: Vec<Vec<f64>>,
    mdc_base: Vec<f64>,
    mdc_by_age: Vec<Vec<f64>>,
    mdc_severity: Vec<f64>,
    mdc_surgical: Vec<f64>,
    disp_base: Vec<f64>,
}

fn effects(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn draw_logits(rng: &mut StreamRng, logits: &[f64]) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / z).collect();
    sample_categorical(&p, rng)
}

fn chance(rng: &mut StreamRng, p: f64) -> bool {
    rng.random::<f64>() < p
}

impl Default for HospitalModel {
    fn default() -> Self {
        HospitalModel::new()
    }
}

impl HospitalModel {
    pub fn new() -> Self {
        let mut rng = substream(DEFAULT_SEED, 0, Purpose::Generator, u64::MAX);
        let age_groups = 5;
        HospitalModel {
            schema: Arc::new(hospital_schema()),
            zip_by_race: (0..7).map(|_| effects(&mut rng, 16, 1.5)).collect(),
            pay_base: effects(&mut rng, 9, 1.0),
            pay_by_race: (0..7).map(|_| effects(&mut rng, 9, 0.6)).collect(),
            mdc_base: effects(&mut rng, 25, 1.2),
            mdc_by_age: (0..age_groups).map(|_| effects(&mut rng, 25, 1.0)).collect(),
            mdc_severity: (0..25).map(|_| rng.random_range(0.0..1.2)).collect(),
            mdc_surgical: (0..25).map(|_| rng.random_range(0.05..0.6)).collect(),
            disp_base: effects(&mut rng, 13, 0.8),
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    fn age_group(age: Option<usize>) -> usize {
        match age {
            None => 2,
            Some(a) if a < 1 => 0,
            Some(a) if a < 4 => 1,
            Some(a) if a < 9 => 2,
            Some(a) if a < 13 => 3,
            Some(_) => 4,
        }
    }

    /// One record.
    pub fn sample(&self, rng: &mut StreamRng) -> Vec<Category> {
        let mut row = vec![0 as Category; self.schema.len()];

        // age: newborn spike, dip in childhood, heavy elderly tail
        let age_w = [
            8.0, 1.5, 1.5, 2.5, 4.0, 5.0, 5.0, 4.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.0, 6.0, 6.0, 10.0, 0.3,
        ];
        let total: f64 = age_w.iter().sum();
        let age_p: Vec<f64> = age_w.iter().map(|w| w / total).collect();
        let age_cat = sample_categorical(&age_p, rng);
        let age = (age_cat < 17).then_some(age_cat);
        let years = age.map_or(45.0, |a| 5.0 * a as f64);
        let group = Self::age_group(age);
        row[AGE] = age_cat as Category;

        let female_p = if (15.0..45.0).contains(&years) { 0.72 } else { 0.5 };
        row[SEX] = if chance(rng, 0.003) {
            2
        } else {
            u32::from(chance(rng, female_p))
        };
        let female = row[SEX] == 1;

        let race = sample_categorical(&[0.42, 0.10, 0.01, 0.13, 0.01, 0.30, 0.03], rng);
        row[RACE] = race as Category;
        let hispanic_p = match race {
            5 => 0.85,
            0 => 0.3,
            6 => 0.4,
            _ => 0.05,
        };
        row[ETHNCTY] = if chance(rng, 0.01) {
            3
        } else if chance(rng, 0.02) {
            2
        } else {
            u32::from(!chance(rng, hispanic_p))
        };

        row[PATZIP] = draw_logits(rng, &self.zip_by_race[race]) as Category;

        let mut pay = self.pay_base.clone();
        for (p, e) in pay.iter_mut().zip(&self.pay_by_race[race]) {
            *p += e;
        }
        pay[2] += 1.5;
        if years >= 65.0 {
            pay[0] += 3.5;
        } else if years < 20.0 {
            pay[1] += 1.5;
        }
        row[PAY] = draw_logits(rng, &pay) as Category;

        let mut typ = vec![3.0, 0.0, 0.5, -1.0, -0.5, -1.5];
        if years >= 70.0 {
            typ[1] += 2.0;
        }
        if (15.0..60.0).contains(&years) {
            typ[2] += 1.0;
            typ[3] += 0.8;
        }
        let t = draw_logits(rng, &typ);
        row[TYP] = t as Category;

        let mut mdc: Vec<f64> = self.mdc_base.iter().zip(&self.mdc_by_age[group]).map(|(a, b)| a + b).collect();
        match age {
            Some(0) => mdc[14] += 5.0,
            _ if female && (15.0..45.0).contains(&years) => mdc[13] += 2.5,
            _ => {}
        }
        if years >= 60.0 {
            mdc[4] += 1.5;
            mdc[3] += 0.8;
        }
        match t {
            2 => mdc[18] += 6.0,
            3 => mdc[19] += 6.0,
            4 => mdc[7] += 2.5,
            _ => {}
        }
        let m = draw_logits(rng, &mdc);
        row[MDC] = m as Category;

        let center = 0.2 + self.mdc_severity[m] + years / 80.0 * 0.8;
        let sev_logits: Vec<f64> = (0..3).map(|s| -((s as f64 - center).powi(2)) / 0.5).collect();
        let sev = draw_logits(rng, &sev_logits);
        row[SEV] = sev as Category;

        let surgical_p = (self.mdc_surgical[m] + if sev == 2 { 0.15 } else { 0.0 }).min(0.95);
        let surgical = chance(rng, surgical_p);
        row[CAT] = u32::from(surgical);

        let mean_days = 1.5
            + 2.0 * sev as f64
            + if surgical { 1.5 } else { 0.0 }
            + match t {
                1 => 25.0,
                2 => 9.0,
                3 => 6.0,
                4 => 12.0,
                _ => 0.0,
            };
        let days = Exp::new(1.0 / mean_days).expect("positive rate").sample(rng);
        let los_spec = self.schema.feature(LOS);
        row[LOS] = if chance(rng, 0.004) {
            los_spec.cardinality() as Category - 1
        } else {
            bin_numeric(days, los_spec).expect("finite stay") as Category
        };

        let noise: f64 = Normal::new(0.0, 0.45).expect("valid sd").sample(rng);
        let charge = 3500.0
            * (1.0 + days).powf(0.65)
            * if surgical { 1.8 } else { 1.0 }
            * 1.3f64.powi(sev as i32)
            * noise.exp();
        let charge_spec = self.schema.feature(CHARGE);
        row[CHARGE] = if chance(rng, 0.004) {
            charge_spec.cardinality() as Category - 1
        } else {
            bin_numeric(charge, charge_spec).expect("finite charge") as Category
        };

        let mut disp = self.disp_base.clone();
        disp[0] += 3.0;
        if sev == 2 {
            disp[7] += 1.2;
            disp[9] += 0.8;
        }
        if years >= 70.0 {
            disp[3] += 1.5;
            disp[10] += 0.6;
        }
        if t == 1 {
            disp[2] += 1.0;
        }
        row[DISP] = draw_logits(rng, &disp) as Category;
        row
    }

    /// `n` records; record `r` uses its own stream of `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut cells = Vec::with_capacity(n * self.schema.len());
        for r in 0..n {
            let mut rng = substream(seed, 0, Purpose::Generator, r as u64);
            cells.extend(self.sample(&mut rng));
        }
        Dataset::from_cells(Arc::clone(&self.schema), cells).expect("rows match the schema")
    }
}

/// `n` hospital-like records from the fixed model.
pub fn generate_hospital(n: usize, seed: u64) -> Dataset {
    HospitalModel::new().generate(n, seed)
}
