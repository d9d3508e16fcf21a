//! Synthetic account/merchant transaction worlds with segment affinities,
//! seasonality, churn and persistent category shocks.
//!
//! Accounts belong to segments (`account i` → segment `i mod S`), merchants
//! to categories (`merchant j` → category `j mod C`, popularity rank `j div C`
//! within it). Each month every active account draws a Poisson number of
//! transactions, picks a category from its segment's propensities for that
//! month and a merchant from the category's active merchants with Zipf
//! weights by popularity rank.
//!
//! Randomness is split by purpose: churn uses `derive_seed(seed, 0)` and runs
//! month by month; transactions of month `t` use `derive_seed(seed, t + 1)`,
//! so months can be generated in any order with identical output.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::graph::TransactionRecord;
use crate::{derive_seed, par, Error, Result};

/// A persistent change of category propensities from `month` on.
///
/// Each listed category's propensity is multiplied by `multiplier`; the mass
/// removed (or added, for multipliers above 1) is given to (or taken from)
/// the target categories in equal parts, clamped at zero, and every
/// segment's row is renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub month: usize,
    pub categories: Vec<usize>,
    pub multiplier: f64,
    #[serde(default)]
    pub targets: Vec<usize>,
}

/// Per-month birth and death probabilities. Nodes not active initially are
/// born with probability `birth` each month; active nodes die with
/// probability `death` and never return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Churn {
    pub initial_active: f64,
    pub birth: f64,
    pub death: f64,
}

impl Default for Churn {
    fn default() -> Self {
        Self {
            initial_active: 1.0,
            birth: 0.0,
            death: 0.0,
        }
    }
}

impl Churn {
    fn validate(&self, what: &str) -> Result<()> {
        for (name, p) in [("initial_active", self.initial_active), ("birth", self.birth), ("death", self.death)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{what} churn {name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub n_accounts: usize,
    pub n_merchants: usize,
    pub n_categories: usize,
    pub months: usize,
    /// First day of month 0, `YYYY-MM-DD`.
    pub start: String,
    /// Mean transactions per active account per month, one per segment.
    pub mean_transactions: Vec<f64>,
    pub zipf_exponent: f64,
    /// Segment × category propensities; rows sum to 1.
    pub affinity: Vec<Vec<f64>>,
    /// Category × calendar-month (January first) multiplicative factors;
    /// empty for none.
    pub seasonality: Vec<Vec<f64>>,
    pub account_churn: Churn,
    pub merchant_churn: Churn,
    pub shocks: Vec<Shock>,
    pub rng_seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::demo()
    }
}

/// Segment-primary affinities: each segment puts `primary` on category
/// `s mod C`, `secondary` on `s + 1 mod C` and spreads the rest evenly.
pub fn banded_affinity(segments: usize, categories: usize, primary: f64, secondary: f64) -> Vec<Vec<f64>> {
    (0..segments)
        .map(|s| {
            let mut row = vec![0.0; categories];
            if categories == 1 {
                row[0] = 1.0;
                return row;
            }
            let rest = (1.0 - primary - secondary).max(0.0) / categories.saturating_sub(2).max(1) as f64;
            for (c, v) in row.iter_mut().enumerate() {
                *v = rest;
                if c == s % categories {
                    *v = primary;
                } else if c == (s + 1) % categories {
                    *v = secondary;
                }
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            row
        })
        .collect()
}

impl WorldSpec {
    /// The demo world: 1000 merchants in 10 categories over 24 months, with a
    /// surge in category 3 drawn from category 7 at month 18.
    pub fn demo() -> Self {
        let segments = 10;
        let categories = 10;
        Self {
            n_accounts: 1500,
            n_merchants: 1000,
            n_categories: categories,
            months: 24,
            start: "2018-01-01".into(),
            mean_transactions: vec![20.0; segments],
            zipf_exponent: 1.1,
            affinity: banded_affinity(segments, categories, 0.45, 0.2),
            seasonality: (0..categories)
                .map(|c| {
                    (0..12)
                        .map(|m| 1.0 + 0.05 * (2.0 * std::f64::consts::PI * (m + c) as f64 / 12.0).sin())
                        .collect()
                })
                .collect(),
            account_churn: Churn {
                initial_active: 0.85,
                birth: 0.02,
                death: 0.005,
            },
            merchant_churn: Churn {
                initial_active: 0.85,
                birth: 0.02,
                death: 0.005,
            },
            shocks: vec![Shock {
                month: 18,
                categories: vec![3],
                multiplier: 3.0,
                targets: vec![7],
            }],
            rng_seed: 7,
        }
    }

    pub fn n_segments(&self) -> usize {
        self.affinity.len()
    }

    pub fn start_date(&self) -> Result<NaiveDate> {
        let d = NaiveDate::parse_from_str(&self.start, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("world start `{}`: {e}", self.start)))?;
        if d.day() != 1 {
            return Err(Error::Config(format!("world start `{}` must be a first of month", self.start)));
        }
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_accounts == 0 || self.n_merchants == 0 || self.n_categories == 0 || self.months == 0 {
            return Err(Error::Config("world sizes and months must be >= 1".into()));
        }
        self.start_date()?;
        let s = self.n_segments();
        if s == 0 {
            return Err(Error::Config("affinity needs at least one segment row".into()));
        }
        for (i, row) in self.affinity.iter().enumerate() {
            if row.len() != self.n_categories {
                return Err(Error::Config(format!(
                    "affinity row {i} has {} entries, expected {}",
                    row.len(),
                    self.n_categories
                )));
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::Config(format!("affinity row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("affinity row {i} sums to {sum}, not 1")));
            }
        }
        if self.mean_transactions.len() != s {
            return Err(Error::Config(format!(
                "mean_transactions has {} entries for {s} segments",
                self.mean_transactions.len()
            )));
        }
        if self.mean_transactions.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("mean_transactions must be positive".into()));
        }
        if !(self.zipf_exponent >= 0.0) || !self.zipf_exponent.is_finite() {
            return Err(Error::Config("zipf_exponent must be non-negative".into()));
        }
        if !self.seasonality.is_empty() {
            if self.seasonality.len() != self.n_categories || self.seasonality.iter().any(|r| r.len() != 12) {
                return Err(Error::Config("seasonality must be categories × 12".into()));
            }
            if self.seasonality.iter().flatten().any(|f| !(*f >= 0.0) || !f.is_finite()) {
                return Err(Error::Config("seasonality factors must be non-negative".into()));
            }
        }
        self.account_churn.validate("account")?;
        self.merchant_churn.validate("merchant")?;
        for (i, sh) in self.shocks.iter().enumerate() {
            if sh.month >= self.months {
                return Err(Error::Config(format!(
                    "shock {i} at month {} is outside 0..{}",
                    sh.month, self.months
                )));
            }
            if let Some(c) = sh.categories.iter().chain(&sh.targets).find(|&&c| c >= self.n_categories) {
                return Err(Error::Config(format!("shock {i} references unknown category {c}")));
            }
            if sh.categories.is_empty() {
                return Err(Error::Config(format!("shock {i} lists no categories")));
            }
            if !(sh.multiplier >= 0.0) || !sh.multiplier.is_finite() {
                return Err(Error::Config(format!("shock {i} multiplier must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("world spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("world spec: {e}")))
    }

    pub fn account_id(&self, i: usize) -> String {
        format!("a{i:06}")
    }

    pub fn merchant_id(&self, j: usize) -> String {
        format!("m{j:05}")
    }

    pub fn category_name(&self, c: usize) -> String {
        format!("cat{c:02}")
    }

    pub fn merchant_category(&self, j: usize) -> usize {
        j % self.n_categories
    }

    /// Merchant id → category name for every merchant in the world.
    pub fn merchant_categories(&self) -> BTreeMap<String, String> {
        (0..self.n_merchants)
            .map(|j| (self.merchant_id(j), self.category_name(self.merchant_category(j))))
            .collect()
    }

    /// Category propensities of `segment` in month `t`, seasonality and all
    /// shocks up to `t` applied.
    pub fn propensities(&self, segment: usize, t: usize) -> Vec<f64> {
        let mut p = self.affinity[segment].clone();
        if !self.seasonality.is_empty() {
            let cal = self.calendar_month(t);
            for (c, v) in p.iter_mut().enumerate() {
                *v *= self.seasonality[c][cal];
            }
            normalize(&mut p);
        }
        for sh in self.shocks.iter().filter(|s| s.month <= t) {
            apply_shock(&mut p, sh);
        }
        p
    }

    fn calendar_month(&self, t: usize) -> usize {
        let m0 = self.start_date().map(|d| d.month0() as usize).unwrap_or(0);
        (m0 + t) % 12
    }

    fn month_start(&self, t: usize) -> DateTime<Utc> {
        let d = self.start_date().expect("validated");
        let total = d.month0() as usize + t;
        let date = NaiveDate::from_ymd_opt(d.year() + (total / 12) as i32, (total % 12) as u32 + 1, 1).expect("valid month");
        Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
    }
}

fn normalize(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        p.iter_mut().for_each(|v| *v /= sum);
    }
}

fn apply_shock(p: &mut [f64], sh: &Shock) {
    for &c in &sh.categories {
        let delta = p[c] * (1.0 - sh.multiplier);
        p[c] *= sh.multiplier;
        if !sh.targets.is_empty() {
            let share = delta / sh.targets.len() as f64;
            for &g in &sh.targets {
                p[g] = (p[g] + share).max(0.0);
            }
        }
    }
    normalize(p);
}

/// Active flags per month, `[month][node]`.
fn churn_schedule(n: usize, months: usize, churn: &Churn, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unborn,
        Active,
        Dead,
    }
    let mut state: Vec<State> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < churn.initial_active {
                State::Active
            } else {
                State::Unborn
            }
        })
        .collect();
    let mut out = Vec::with_capacity(months);
    for t in 0..months {
        if t > 0 {
            for s in state.iter_mut() {
                let u: f64 = rng.random();
                *s = match *s {
                    State::Unborn if u < churn.birth => State::Active,
                    State::Active if u < churn.death => State::Dead,
                    other => other,
                };
            }
        }
        out.push(state.iter().map(|s| *s == State::Active).collect());
    }
    out
}

/// Which nodes are active in which month.
#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub accounts: Vec<Vec<bool>>,
    pub merchants: Vec<Vec<bool>>,
}

pub fn activity(spec: &WorldSpec) -> Result<Activity> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, 0));
    let accounts = churn_schedule(spec.n_accounts, spec.months, &spec.account_churn, &mut rng);
    let merchants = churn_schedule(spec.n_merchants, spec.months, &spec.merchant_churn, &mut rng);
    Ok(Activity { accounts, merchants })
}

fn generate_month(spec: &WorldSpec, t: usize, act: &Activity) -> Result<Vec<TransactionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, t as u64 + 1));
    let c_n = spec.n_categories;
    // Active merchants per category in popularity order (index order).
    let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); c_n];
    for j in (0..spec.n_merchants).filter(|&j| act.merchants[t][j]) {
        by_cat[spec.merchant_category(j)].push(j);
    }
    let zipfs: Vec<Option<Zipf<f64>>> = by_cat
        .iter()
        .map(|ms| (!ms.is_empty()).then(|| Zipf::new(ms.len() as f64, spec.zipf_exponent).expect("valid zipf")))
        .collect();
    let cat_pickers: Vec<Option<WeightedIndex<f64>>> = (0..spec.n_segments())
        .map(|s| {
            let p: Vec<f64> = spec
                .propensities(s, t)
                .into_iter()
                .enumerate()
                .map(|(c, v)| if by_cat[c].is_empty() { 0.0 } else { v })
                .collect();
            WeightedIndex::new(&p).ok()
        })
        .collect();
    let counts: Vec<Poisson<f64>> = spec
        .mean_transactions
        .iter()
        .map(|&m| Poisson::new(m).expect("validated mean"))
        .collect();

    let start = spec.month_start(t);
    let seconds = (spec.month_start(t + 1) - start).num_seconds();
    let offset = Uniform::new(0, seconds).expect("non-empty month");

    let mut out = Vec::new();
    for a in (0..spec.n_accounts).filter(|&a| act.accounts[t][a]) {
        let s = a % spec.n_segments();
        let Some(picker) = &cat_pickers[s] else { continue };
        let n = counts[s].sample(&mut rng) as usize;
        for _ in 0..n {
            let c = picker.sample(&mut rng);
            let zipf = zipfs[c].as_ref().expect("picker skips empty categories");
            let rank = zipf.sample(&mut rng) as usize - 1;
            let j = by_cat[c][rank];
            let ts = start + Duration::seconds(offset.sample(&mut rng));
            out.push(TransactionRecord::new(
                spec.account_id(a),
                spec.merchant_id(j),
                ts,
                spec.category_name(c),
            )?);
        }
    }
    Ok(out)
}

/// The full record stream, month by month.
pub fn generate(spec: &WorldSpec) -> Result<Vec<TransactionRecord>> {
    let act = activity(spec)?;
    let months: Vec<Result<Vec<TransactionRecord>>> = par::map_range(spec.months, |t| generate_month(spec, t, &act));
    let mut out = Vec::new();
    for m in months {
        out.extend(m?);
    }
    Ok(out)
}

/// Closed-form expectations for a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `[month][category]` expected transaction share, from segment
    /// propensities weighted by segment size and mean activity, assuming all
    /// categories stay stocked.
    pub shares: Vec<Vec<f64>>,
    /// Per shock: merchants in the shocked categories.
    pub shocked_merchants: Vec<BTreeSet<String>>,
    /// Per shock: merchants in the target categories.
    pub target_merchants: Vec<BTreeSet<String>>,
}

pub fn ground_truth(spec: &WorldSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let s_n = spec.n_segments();
    let weights: Vec<f64> = (0..s_n)
        .map(|s| {
            let members = (spec.n_accounts + s_n - 1 - s) / s_n;
            members as f64 * spec.mean_transactions[s]
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let shares = (0..spec.months)
        .map(|t| {
            let mut row = vec![0.0; spec.n_categories];
            for (s, w) in weights.iter().enumerate() {
                for (c, p) in spec.propensities(s, t).into_iter().enumerate() {
                    row[c] += w * p / total;
                }
            }
            row
        })
        .collect();
    let members = |cats: &[usize]| -> BTreeSet<String> {
        (0..spec.n_merchants)
            .filter(|&j| cats.contains(&spec.merchant_category(j)))
            .map(|j| spec.merchant_id(j))
            .collect()
    };
    Ok(GroundTruth {
        shares,
        shocked_merchants: spec.shocks.iter().map(|s| members(&s.categories)).collect(),
        target_merchants: spec.shocks.iter().map(|s| members(&s.targets)).collect(),
    })
}
