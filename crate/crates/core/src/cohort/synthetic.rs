//! Synthetic clinical cohort generator.
//!
//! Twenty features: age, sex, race and insurance; nine chronic-condition
//! flags; the Charlson comorbidity index (CCI); three utilisation counters;
//! BMI, systolic blood pressure and a neighbourhood deprivation index.
//!
//! The outcome is a noisy logistic score dominated by age, prior
//! hospitalisations, CCI, ED visits and congestive heart failure:
//!
//! ```text
//! logit = 1.6 age_z + 0.7 prior_hosp + 0.6 cci + 0.45 ed_visits + 0.9 chf
//!       + 0.3 diabetes + 0.3 ckd + 0.2 copd + 0.1 deprivation_z + N(0, 1)
//! ```
//!
//! Labels are assigned by rank: the top `round(n * positive_fraction)`
//! latent scores are positive, so prevalence is exact by construction.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Cohort, Column, FeatureMatrix, Partition};
use crate::error::{Error, Result};

const MARGINAL_TOLERANCE: f64 = 1e-9;

/// Category → probability map, kept in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal(pub Vec<(String, f64)>);

impl Marginal {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Self {
        Marginal(entries.into_iter().map(|(k, p)| (k.into(), p)).collect())
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidConfig(format!("{what} marginal is empty")));
        }
        if self.0.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(format!("{what} marginal has a probability outside [0, 1]")));
        }
        let total: f64 = self.0.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > MARGINAL_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "{what} marginal sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    fn levels(&self) -> Vec<String> {
        self.0.iter().map(|(k, _)| k.clone()).collect()
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, (_, p)) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.0.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBand {
    pub label: String,
    /// Inclusive lower age bound in years.
    pub lo: f64,
    /// Exclusive upper age bound in years.
    pub hi: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortGenConfig {
    pub n: usize,
    pub seed: u64,
    pub positive_fraction: f64,
    pub age_bands: Vec<AgeBand>,
    pub sex: Marginal,
    pub race: Marginal,
    pub insurance: Marginal,
    pub cci_mean: f64,
    pub cci_sd: f64,
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    pub deprivation_mean: f64,
    pub deprivation_sd: f64,
}

impl Default for CohortGenConfig {
    /// Marginals and clinical moments of the reference 10,000-patient cohort.
    fn default() -> Self {
        let band = |label: &str, lo: f64, hi: f64, probability: f64| AgeBand {
            label: label.to_string(),
            lo,
            hi,
            probability,
        };
        CohortGenConfig {
            n: 10_000,
            seed: 42,
            positive_fraction: 0.30,
            age_bands: vec![
                band("18-44", 18.0, 45.0, 0.1835),
                band("45-64", 45.0, 65.0, 0.2502),
                band("65-74", 65.0, 75.0, 0.2822),
                band("75+", 75.0, 95.0, 0.2841),
            ],
            sex: Marginal::new([("Female", 0.5549), ("Male", 0.4451)]),
            race: Marginal::new([
                ("White", 0.6379),
                ("Black", 0.1343),
                ("Hispanic", 0.1301),
                ("Asian", 0.0569),
                ("Other", 0.0408),
            ]),
            insurance: Marginal::new([
                ("Medicare", 0.4737),
                ("Private", 0.2977),
                ("Medicaid", 0.1444),
                ("Uninsured", 0.0842),
            ]),
            cci_mean: 0.99,
            cci_sd: 1.20,
            bmi_mean: 28.7,
            bmi_sd: 6.0,
            deprivation_mean: 49.8,
            deprivation_sd: 24.1,
        }
    }
}

impl CohortGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "positive_fraction {} must lie strictly inside (0, 1)",
                self.positive_fraction
            )));
        }
        let ages = Marginal(
            self.age_bands
                .iter()
                .map(|b| (b.label.clone(), b.probability))
                .collect(),
        );
        ages.validate("age band")?;
        if self.age_bands.iter().any(|b| !(b.hi > b.lo)) {
            return Err(Error::InvalidConfig("age band with hi <= lo".into()));
        }
        self.sex.validate("sex")?;
        self.race.validate("race")?;
        self.insurance.validate("insurance")?;
        for (what, mean, sd) in [
            ("cci", self.cci_mean, self.cci_sd),
            ("bmi", self.bmi_mean, self.bmi_sd),
            ("deprivation", self.deprivation_mean, self.deprivation_sd),
        ] {
            if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                return Err(Error::InvalidConfig(format!("{what} mean/sd must be finite with sd > 0")));
            }
        }
        if self.cci_mean <= 0.0 {
            return Err(Error::InvalidConfig("cci_mean must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) const CONDITION_FLAGS: [&str; 9] = [
    "hypertension",
    "diabetes",
    "chf",
    "copd",
    "ckd",
    "cad",
    "afib",
    "depression",
    "cancer",
];

/// (intercept, age slope, cci slope) of each condition's logistic prevalence.
const FLAG_MODEL: [(f64, f64, f64); 9] = [
    (-0.4, 0.9, 0.35),
    (-1.5, 0.5, 0.45),
    (-3.0, 0.9, 0.55),
    (-2.6, 0.6, 0.45),
    (-2.8, 0.8, 0.55),
    (-2.4, 0.9, 0.45),
    (-3.0, 1.0, 0.35),
    (-1.8, -0.1, 0.25),
    (-2.9, 0.6, 0.40),
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_synthetic(config: &CohortGenConfig) -> Result<Cohort> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let bands = Marginal(
        config
            .age_bands
            .iter()
            .map(|b| (b.label.clone(), b.probability))
            .collect(),
    );

    // Demographics and deprivation.
    let mut band_code = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut sex = Vec::with_capacity(n);
    let mut race = Vec::with_capacity(n);
    let mut insurance = Vec::with_capacity(n);
    let mut deprivation = Vec::with_capacity(n);
    for _ in 0..n {
        let b = bands.draw(&mut rng);
        let band = &config.age_bands[b];
        band_code.push(b as u32);
        age.push(band.lo + rng.random::<f64>() * (band.hi - band.lo));
        sex.push(config.sex.draw(&mut rng) as f64);
        race.push(config.race.draw(&mut rng) as f64);
        insurance.push(config.insurance.draw(&mut rng) as f64);
        let d = config.deprivation_mean + config.deprivation_sd * std_normal.sample(&mut rng);
        deprivation.push(d.clamp(0.0, 100.0));
    }
    let age_z: Vec<f64> = age.iter().map(|a| (a - 62.0) / 18.0).collect();

    // CCI: gamma-Poisson with an age-driven mean, scaled so the cohort mean
    // and SD track the configured moments.
    let raw: Vec<f64> = age_z.iter().map(|z| (0.5 * z).exp()).collect();
    let raw_mean = raw.iter().sum::<f64>() / n as f64;
    let mu: Vec<f64> = raw.iter().map(|r| config.cci_mean * r / raw_mean).collect();
    let mu_mean = mu.iter().sum::<f64>() / n as f64;
    let mu_var = mu.iter().map(|m| (m - mu_mean).powi(2)).sum::<f64>() / n as f64;
    let mu_sq = mu.iter().map(|m| m * m).sum::<f64>() / n as f64;
    let extra = config.cci_sd.powi(2) - mu_mean - mu_var;
    let shape = if extra > 0.0 { Some(mu_sq / extra) } else { None };
    let mut cci = Vec::with_capacity(n);
    for &m in &mu {
        let rate = match shape {
            Some(k) => Gamma::new(k, m / k).unwrap().sample(&mut rng),
            None => m,
        };
        cci.push(poisson(rate, &mut rng));
    }

    let mut flags = vec![Vec::with_capacity(n); CONDITION_FLAGS.len()];
    for i in 0..n {
        for (j, &(a, b, c)) in FLAG_MODEL.iter().enumerate() {
            let p = sigmoid(a + b * age_z[i] + c * (cci[i] - 1.0));
            flags[j].push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
    }
    let hypertension = &flags[0];

    let mut prior_hosp = Vec::with_capacity(n);
    let mut ed_visits = Vec::with_capacity(n);
    let mut outpatient = Vec::with_capacity(n);
    let mut bmi = Vec::with_capacity(n);
    let mut sbp = Vec::with_capacity(n);
    for i in 0..n {
        prior_hosp.push(poisson(0.2 + 0.25 * cci[i] + 0.1 * age_z[i].max(0.0), &mut rng));
        ed_visits.push(poisson(0.4 + 0.2 * cci[i] + 0.3 * deprivation[i] / 100.0, &mut rng));
        outpatient.push(poisson(2.0 + 0.8 * cci[i], &mut rng));
        let b = config.bmi_mean + config.bmi_sd * std_normal.sample(&mut rng);
        bmi.push(b.clamp(14.0, 70.0));
        let s = 128.0 + 6.0 * age_z[i] + 4.0 * hypertension[i] + 15.0 * std_normal.sample(&mut rng);
        sbp.push(s.clamp(70.0, 240.0));
    }

    let dep_z: Vec<f64> = deprivation
        .iter()
        .map(|d| (d - config.deprivation_mean) / config.deprivation_sd)
        .collect();
    let latent: Vec<f64> = (0..n)
        .map(|i| {
            1.6 * age_z[i]
                + 0.7 * prior_hosp[i]
                + 0.6 * cci[i]
                + 0.45 * ed_visits[i]
                + 0.9 * flags[2][i]
                + 0.3 * flags[1][i]
                + 0.3 * flags[4][i]
                + 0.2 * flags[3][i]
                + 0.1 * dep_z[i]
                + std_normal.sample(&mut rng)
        })
        .collect();
    let labels = rank_threshold(&latent, config.positive_fraction);

    let mut columns = vec![
        Column::continuous("age"),
        Column::categorical("sex", config.sex.levels()),
        Column::categorical("race", config.race.levels()),
        Column::categorical("insurance", config.insurance.levels()),
    ];
    columns.extend(CONDITION_FLAGS.iter().map(|f| Column::flag(*f)));
    columns.extend(
        [
            "cci",
            "prior_hospitalizations",
            "ed_visits",
            "outpatient_visits",
            "bmi",
            "systolic_bp",
            "deprivation_index",
        ]
        .into_iter()
        .map(Column::continuous),
    );
    let mut data: Vec<&[f64]> = vec![&age, &sex, &race, &insurance];
    data.extend(flags.iter().map(|f| f.as_slice()));
    data.extend([
        cci.as_slice(),
        &prior_hosp,
        &ed_visits,
        &outpatient,
        &bmi,
        &sbp,
        &deprivation,
    ]);
    let d = columns.len();
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        values.extend(data.iter().map(|col| col[i]));
    }
    let features = FeatureMatrix::new(columns, values)?;

    let mut subgroups = BTreeMap::new();
    subgroups.insert(
        "age_band".to_string(),
        Partition::from_codes(bands.levels(), band_code)?,
    );
    for (name, marginal, codes) in [
        ("sex", &config.sex, &sex),
        ("race", &config.race, &race),
        ("insurance", &config.insurance, &insurance),
    ] {
        subgroups.insert(
            name.to_string(),
            Partition::from_codes(marginal.levels(), codes.iter().map(|&c| c as u32).collect())?,
        );
    }
    let mut need_proxies = BTreeMap::new();
    need_proxies.insert("cci".to_string(), cci);

    let width = n.to_string().len().max(5);
    let row_ids = (0..n).map(|i| format!("P{:0width$}", i + 1)).collect();
    Cohort::new(features, labels, subgroups, need_proxies, row_ids)
}

fn poisson(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate).unwrap().sample(rng)
}

/// Marks the top `round(n * fraction)` scores positive; ties go to the lower index.
fn rank_threshold(latent: &[f64], fraction: f64) -> Vec<u8> {
    let n = latent.len();
    let n_pos = (n as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; n];
    for &i in &order[..n_pos] {
        labels[i] = 1;
    }
    labels
}
