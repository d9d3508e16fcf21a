use std::collections::BTreeMap;

use txdrift::synthgen::{generate, ground_truth, Churn, Shock, WorldSpec};

fn stationary(seed: u64) -> WorldSpec {
    WorldSpec {
        n_accounts: 200,
        n_merchants: 60,
        n_categories: 3,
        months: 4,
        mean_transactions: vec![10.0],
        affinity: vec![vec![0.5, 0.3, 0.2]],
        seasonality: Vec::new(),
        account_churn: Churn::default(),
        merchant_churn: Churn::default(),
        shocks: Vec::new(),
        rng_seed: seed,
        ..WorldSpec::demo()
    }
}

/// `[month][category]` transaction counts.
fn month_counts(spec: &WorldSpec) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; spec.n_categories]; spec.months];
    let start = spec.start_date().unwrap();
    for r in generate(spec).unwrap() {
        let t = (r.timestamp.date_naive().year_month_index() - start.year_month_index()) as usize;
        let c: usize = r.category.trim_start_matches("cat").parse().unwrap();
        counts[t][c] += 1;
    }
    counts
}

trait MonthIndex {
    fn year_month_index(&self) -> i32;
}

impl MonthIndex for chrono::NaiveDate {
    fn year_month_index(&self) -> i32 {
        use chrono::Datelike;
        self.year() * 12 + self.month0() as i32
    }
}

#[test]
fn pooled_shares_within_three_binomial_sigma() {
    let spec0 = stationary(0);
    let truth = ground_truth(&spec0).unwrap();
    let mut pooled = vec![vec![0u64; 3]; spec0.months];
    for seed in 0..20 {
        for (t, row) in month_counts(&stationary(seed)).into_iter().enumerate() {
            for (c, n) in row.into_iter().enumerate() {
                pooled[t][c] += n;
            }
        }
    }
    for (t, row) in pooled.iter().enumerate() {
        let n: u64 = row.iter().sum();
        for (c, &k) in row.iter().enumerate() {
            let p = truth.shares[t][c];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let share = k as f64 / n as f64;
            assert!((share - p).abs() <= 3.0 * sigma, "t={t} c={c}: {share} vs {p} (σ={sigma})");
        }
    }
}

#[test]
fn halving_shock_halves_the_share() {
    let mut spec = stationary(11);
    spec.n_accounts = 1000;
    spec.shocks = vec![Shock {
        month: 2,
        categories: vec![0],
        multiplier: 0.5,
        targets: vec![1],
    }];
    let counts = month_counts(&spec);
    let share = |t: usize| counts[t][0] as f64 / counts[t].iter().sum::<u64>() as f64;
    let before = (share(0) + share(1)) / 2.0;
    let after = (share(2) + share(3)) / 2.0;
    assert!((after / before - 0.5).abs() < 0.03, "ratio {}", after / before);
    let truth = ground_truth(&spec).unwrap();
    assert_eq!(truth.shares[0], truth.shares[1]);
    assert_ne!(truth.shares[1], truth.shares[2]);
    assert_eq!(truth.shares[2], truth.shares[3]);
}

#[test]
fn within_category_popularity_is_zipf() {
    // One category of 50 merchants, no churn: merchant index is the
    // popularity rank. Kolmogorov–Smirnov against the Zipf CDF at α = 0.01
    // (critical value 1.63/√n, conservative for a discrete distribution).
    let spec = WorldSpec {
        n_accounts: 300,
        n_merchants: 50,
        n_categories: 1,
        months: 2,
        mean_transactions: vec![20.0],
        affinity: vec![vec![1.0]],
        rng_seed: 5,
        ..stationary(5)
    };
    let mut hits: BTreeMap<usize, u64> = BTreeMap::new();
    let recs = generate(&spec).unwrap();
    for r in &recs {
        let j: usize = r.merchant_id.trim_start_matches('m').parse().unwrap();
        *hits.entry(j).or_default() += 1;
    }
    let n = recs.len() as f64;
    let norm: f64 = (1..=50).map(|k| (k as f64).powf(-spec.zipf_exponent)).sum();
    let (mut emp, mut theo, mut d) = (0.0, 0.0, 0.0f64);
    for k in 0..50 {
        emp += *hits.get(&k).unwrap_or(&0) as f64 / n;
        theo += ((k + 1) as f64).powf(-spec.zipf_exponent) / norm;
        d = d.max((emp - theo).abs());
    }
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d} with n={n}");
}
