//! Demand and price machinery shared by members and students.
//!
//! An agent ranks a list of items and holds a budget drawn uniformly from
//! `[1 - eps, 1]`. Given the mass `z` available on each item, equilibrium
//! prices fill `alpha` units greedily from the top of the agent's order:
//! items fully inside the fill cost `1 - eps * cum / alpha`, the item where
//! the fill completes costs anything between the floor and `1 - eps` when the
//! fill is exact and the floor otherwise, and everything below costs the
//! floor.

/// Probability of buying each item, plus the outside option, for an agent
/// whose budget is uniform on `[1 - eps, 1]` and who buys the most preferred
/// affordable item. The outside option must cost at most `1 - eps`.
pub fn random_demand(prices: &[f64], order: &[usize], eps: f64) -> (Vec<f64>, f64) {
    let mut y = vec![0.0; prices.len()];
    let lo = 1.0 - eps;
    // every budget in [lo, m) has not yet bought anything
    let mut m = 1.0;
    for &i in order {
        let p = prices[i].max(lo);
        if p < m {
            y[i] = (m - p) / eps;
            m = p;
        }
        if m <= lo {
            break;
        }
    }
    (y, (m - lo).max(0.0) / eps)
}

/// Where an agent's greedy fill completes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fill {
    /// Items strictly above the completing item, in the agent's order.
    pub above: Vec<usize>,
    /// The completing item, absent when the agent's items carry too little
    /// mass.
    pub rank: Option<usize>,
    /// The fill completes exactly at the end of the rank item.
    pub tight: bool,
}

/// Locates the fill, treating cumulative masses within `snap` of `alpha` as
/// exact.
pub fn fill(z: &[f64], order: &[usize], alpha: f64, snap: f64) -> Fill {
    let mut cum = 0.0;
    let mut above = Vec::new();
    for &i in order {
        if cum + z[i] >= alpha - snap {
            let tight = cum + z[i] - alpha <= snap;
            return Fill { above, rank: Some(i), tight };
        }
        cum += z[i];
        above.push(i);
    }
    Fill { above, rank: None, tight: false }
}

/// Prices from a fill with the rank item priced at `rank_price`.
pub fn fill_prices(z: &[f64], f: &Fill, alpha: f64, eps: f64, floor: f64, rank_price: f64) -> Vec<f64> {
    let mut p = vec![floor; z.len()];
    let mut cum = 0.0;
    for &i in &f.above {
        cum += z[i];
        p[i] = 1.0 - eps * cum / alpha;
    }
    if let Some(r) = f.rank {
        p[r] = if f.tight { rank_price } else { floor };
    }
    p
}

/// Continuous price selection used while searching. Each item's fill price
/// ramps down to the floor as the cumulative mass through it overshoots
/// `alpha`, over an absolute width `sigma`. The map is Lipschitz with
/// constant of order `1 / sigma` and approaches the equilibrium
/// correspondence as `sigma` shrinks.
pub fn smooth_prices(z: &[f64], order: &[usize], alpha: f64, eps: f64, floor: f64, sigma: f64, out: &mut [f64]) {
    out.fill(floor);
    let mut cum = 0.0;
    for &i in order {
        cum += z[i];
        let over = cum - alpha;
        if over >= sigma {
            return;
        }
        let base = 1.0 - eps * cum.min(alpha) / alpha;
        let w = (1.0 - over.max(0.0) / sigma).min(1.0);
        out[i] = floor + (base - floor) * w;
    }
}

/// Euclidean projection onto `{w : Σw = c, 0 ≤ w ≤ 1}` by bisection on the
/// shift.
pub fn project_capped_simplex(v: &[f64], c: f64, out: &mut [f64]) {
    let clip_sum = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if clip_sum(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - t).clamp(0.0, 1.0);
    }
}

/// Argmax of `Σ w·scores` over `{Σw = c, 0 ≤ w ≤ 1}`: fill by descending
/// score and split the leftover mass equally among the items tied at the
/// cutoff.
pub fn greedy_allocation(scores: &[f64], c: usize, tie_tol: f64) -> Vec<f64> {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut w = vec![0.0; n];
    if c == 0 || n == 0 {
        return w;
    }
    if c >= n {
        return vec![1.0; n];
    }
    let cut = scores[idx[c - 1]];
    let above: Vec<usize> = idx.iter().copied().filter(|&i| scores[i] > cut + tie_tol).collect();
    let tied: Vec<usize> = idx.iter().copied().filter(|&i| (scores[i] - cut).abs() <= tie_tol).collect();
    for &i in &above {
        w[i] = 1.0;
    }
    let share = (c - above.len()) as f64 / tied.len() as f64;
    for &i in &tied {
        w[i] = share;
    }
    w
}
