//! Derivative-free minimizers used by the estimators: Nelder–Mead on an
//! unconstrained parameterization and golden-section search on an interval.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop when the simplex spread in objective value falls below this.
    pub f_tol: f64,
    /// Or when the simplex diameter (max-norm) falls below this.
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_evals: 2000,
            f_tol: 1e-22,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Nelder–Mead with standard coefficients (1, 2, ½, ½).
///
/// The starting point is a vertex of the initial simplex, so the returned value
/// never exceeds `f(x0)`. Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: SimplexOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(n >= 1, "need at least one parameter");
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        let step = if p[i].abs() > 1.0 {
            opts.initial_step * p[i].abs()
        } else {
            opts.initial_step
        };
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diameter = pts[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter <= opts.x_tol || spread <= opts.f_tol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + t * (pts[n][k] - centroid[k]))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = (0..n)
                .map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]))
                .collect();
            vals[i] = eval(&shrunk, &mut evals);
            pts[i] = shrunk;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)))
        .unwrap();
    Minimum {
        x: pts[best].clone(),
        value: vals[best],
        evals,
    }
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
///
/// A coarse scan over `grid` points picks the bracket first, so a function that is
/// not unimodal over the whole interval still lands in the basin of the best grid
/// point.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, grid: usize, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    assert!(hi > lo);
    let grid = grid.max(2);
    let h = (hi - lo) / grid as f64;
    let (mut best_i, mut best_v) = (0usize, f64::INFINITY);
    for i in 0..=grid {
        let v = f(lo + i as f64 * h);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + best_i.saturating_sub(1) as f64 * h;
    let mut b = (lo + (best_i + 1) as f64 * h).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (x, v) = if fc <= fd { (c, fc) } else { (d, fd) };
    if v <= best_v {
        (x, v)
    } else {
        (lo + best_i as f64 * h, best_v)
    }
}
