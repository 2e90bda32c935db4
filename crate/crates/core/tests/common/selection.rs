use muqar::eval::{Criterion, DecisionMatrix, Direction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that a random positive outscores a random negative, ties
/// counting half, by enumerating every pair.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Textbook TOPSIS with uniform weights, no zero columns assumed.
pub fn naive_topsis(values: &[Vec<f64>], benefit: &[bool]) -> (Vec<f64>, Vec<usize>) {
    let m = benefit.len();
    let mut v = values.to_vec();
    for j in 0..m {
        let mut norm = 0.0;
        for row in values {
            norm += row[j] * row[j];
        }
        let norm = norm.sqrt();
        for row in v.iter_mut() {
            row[j] = row[j] / norm / m as f64;
        }
    }
    let mut best = vec![0.0; m];
    let mut worst = vec![0.0; m];
    for j in 0..m {
        let col: Vec<f64> = v.iter().map(|r| r[j]).collect();
        let hi = col.iter().cloned().fold(f64::MIN, f64::max);
        let lo = col.iter().cloned().fold(f64::MAX, f64::min);
        if benefit[j] {
            best[j] = hi;
            worst[j] = lo;
        } else {
            best[j] = lo;
            worst[j] = hi;
        }
    }
    let mut closeness = Vec::new();
    for row in &v {
        let mut dp = 0.0;
        let mut dm = 0.0;
        for j in 0..m {
            dp += (row[j] - best[j]).powi(2);
            dm += (row[j] - worst[j]).powi(2);
        }
        let (dp, dm) = (dp.sqrt(), dm.sqrt());
        closeness.push(if dp + dm == 0.0 { 0.5 } else { dm / (dp + dm) });
    }
    let mut ranking: Vec<usize> = (0..values.len()).collect();
    // Insertion sort: stable, descending.
    for i in 1..ranking.len() {
        let mut k = i;
        while k > 0 && closeness[ranking[k]] > closeness[ranking[k - 1]] {
            ranking.swap(k, k - 1);
            k -= 1;
        }
    }
    (closeness, ranking)
}

/// Backbone candidates scored by MAE (cost), PCC and accuracy (benefits).
pub fn candidate_matrix(seed: u64) -> DecisionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..=8);
    let values = (0..rows)
        .map(|_| vec![rng.gen_range(0.01..0.5), rng.gen_range(0.05..1.0), rng.gen_range(0.3..1.0)])
        .collect();
    DecisionMatrix {
        rows: (0..rows).map(|r| format!("candidate{r}")).collect(),
        criteria: vec![
            Criterion::new("mae", Direction::Cost),
            Criterion::new("pcc", Direction::Benefit),
            Criterion::new("accuracy", Direction::Benefit),
        ],
        values,
        weights: None,
    }
}
