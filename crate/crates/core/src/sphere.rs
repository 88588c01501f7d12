//! Deterministic search over products of unit spheres: dense angular grids
//! for dimensions up to 3, seeded quasi-random direction sampling beyond,
//! and projected gradient ascent with backtracking. This is the inner-sup
//! machinery shared by the capacity-measure audit oracle and the
//! Rademacher complexity estimator.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::linalg::vec_norm;

/// Budget knobs for the grid + ascent search.
#[derive(Debug, Clone)]
pub struct SphereSearchConfig {
    /// Angular resolution (degrees) for dense grids on spheres of
    /// dimension <= 3.
    pub grid_resolution_deg: f64,
    /// Cap on the number of grid *pairs* evaluated; the per-sphere grids
    /// are coarsened together until the product fits.
    pub max_grid_pairs: usize,
    /// Number of grid candidates kept for ascent polish.
    pub polish_candidates: usize,
    /// Ascent iterations per candidate.
    pub ascent_steps: usize,
    /// Initial ascent step size (backtracking halves it on failure).
    pub step_size: f64,
}

impl Default for SphereSearchConfig {
    fn default() -> Self {
        Self {
            grid_resolution_deg: 2.0,
            max_grid_pairs: 40_000,
            polish_candidates: 32,
            ascent_steps: 200,
            step_size: 0.05,
        }
    }
}

/// Renormalizes `x` onto the unit sphere; an all-zero vector becomes `e_0`.
pub fn project_sphere(x: &mut [f64]) {
    let n = vec_norm(x);
    if n == 0.0 {
        x[0] = 1.0;
        for v in &mut x[1..] {
            *v = 0.0;
        }
    } else {
        for v in x {
            *v /= n;
        }
    }
}

/// Uniformly distributed point on the unit sphere in `dim` dimensions.
pub fn random_unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        // Box-Muller-free: sample a cube, reject near-zero, normalize.
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = vec_norm(&v);
        if n > 1e-3 {
            for x in &mut v {
                *x /= n;
            }
            return v;
        }
    }
}

/// Dense grid on the unit sphere `S^{dim-1}` for `dim <= 3`: the two points
/// for `dim = 1`, an angular circle for `dim = 2`, a latitude-longitude
/// grid for `dim = 3`. Returns `None` for higher dimensions.
pub fn sphere_grid(dim: usize, resolution_deg: f64) -> Option<Vec<Vec<f64>>> {
    let step = resolution_deg.to_radians();
    match dim {
        0 => Some(vec![]),
        1 => Some(vec![vec![1.0], vec![-1.0]]),
        2 => {
            let n = (2.0 * std::f64::consts::PI / step).ceil() as usize;
            Some(
                (0..n)
                    .map(|i| {
                        let th = i as f64 * 2.0 * std::f64::consts::PI / n as f64;
                        vec![th.cos(), th.sin()]
                    })
                    .collect(),
            )
        }
        3 => {
            let n_lat = (std::f64::consts::PI / step).ceil() as usize;
            let n_lon = (2.0 * std::f64::consts::PI / step).ceil() as usize;
            let mut pts = Vec::with_capacity((n_lat + 1) * n_lon);
            for i in 0..=n_lat {
                let th = i as f64 * std::f64::consts::PI / n_lat as f64;
                for j in 0..n_lon {
                    let ph = j as f64 * 2.0 * std::f64::consts::PI / n_lon as f64;
                    pts.push(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
            Some(pts)
        }
        _ => None,
    }
}

fn grids_for_pair(
    dim1: usize,
    dim2: usize,
    cfg: &SphereSearchConfig,
    rng: &mut ChaCha12Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    // Coarsen the resolution together until the full product grid fits in
    // the pair budget; fall back to seeded sampling above dimension 3.
    let mut res = cfg.grid_resolution_deg;
    for _ in 0..32 {
        match (sphere_grid(dim1, res), sphere_grid(dim2, res)) {
            (Some(g1), Some(g2)) => {
                if g1.len().saturating_mul(g2.len()) <= cfg.max_grid_pairs {
                    return (g1, g2);
                }
                res *= 1.6;
            }
            _ => break,
        }
    }
    let per_side = (cfg.max_grid_pairs as f64).sqrt().ceil() as usize;
    let g1 = (0..per_side).map(|_| random_unit_vector(dim1, rng)).collect();
    let g2 = (0..per_side).map(|_| random_unit_vector(dim2, rng)).collect();
    (g1, g2)
}

/// Result of a product-sphere maximization.
#[derive(Debug, Clone)]
pub struct SphereMax {
    pub value: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Maximizes `objective(v, w)` over `S^{dim1-1} x S^{dim2-1}` by dense-grid
/// seeding plus projected gradient ascent with backtracking. `gradient`
/// writes the Euclidean gradient into its output slices. The result is a
/// certified *lower* bound on the true supremum.
pub fn maximize_on_sphere_product<F, G>(
    dim1: usize,
    dim2: usize,
    objective: F,
    gradient: G,
    cfg: &SphereSearchConfig,
    rng: &mut ChaCha12Rng,
) -> SphereMax
where
    F: Fn(&[f64], &[f64]) -> f64,
    G: Fn(&[f64], &[f64], &mut [f64], &mut [f64]),
{
    let (g1, g2) = grids_for_pair(dim1, dim2, cfg, rng);
    // Rank all grid pairs, keep the best few as ascent starts.
    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(g1.len() * g2.len());
    for (i, v) in g1.iter().enumerate() {
        for (j, w) in g2.iter().enumerate() {
            ranked.push((objective(v, w), i, j));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite objective"));
    ranked.truncate(cfg.polish_candidates.max(1));

    let mut best = SphereMax {
        value: f64::NEG_INFINITY,
        v: vec![0.0; dim1],
        w: vec![0.0; dim2],
    };
    for &(_, i, j) in &ranked {
        let (value, v, w) =
            ascend(&g1[i], &g2[j], &objective, &gradient, cfg.ascent_steps, cfg.step_size);
        if value > best.value {
            best = SphereMax { value, v, w };
        }
    }
    best
}

fn ascend<F, G>(
    v0: &[f64],
    w0: &[f64],
    objective: &F,
    gradient: &G,
    steps: usize,
    step0: f64,
) -> (f64, Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64], &[f64]) -> f64,
    G: Fn(&[f64], &[f64], &mut [f64], &mut [f64]),
{
    let mut v = v0.to_vec();
    let mut w = w0.to_vec();
    let mut value = objective(&v, &w);
    let mut step = step0;
    let mut gv = vec![0.0; v.len()];
    let mut gw = vec![0.0; w.len()];
    for _ in 0..steps {
        gradient(&v, &w, &mut gv, &mut gw);
        let gnorm = (vec_norm(&gv).powi(2) + vec_norm(&gw).powi(2)).sqrt();
        if gnorm == 0.0 {
            break;
        }
        let mut advanced = false;
        while step > 1e-14 {
            let mut v_new = v.clone();
            let mut w_new = w.clone();
            for (x, g) in v_new.iter_mut().zip(&gv) {
                *x += step * g / gnorm;
            }
            for (x, g) in w_new.iter_mut().zip(&gw) {
                *x += step * g / gnorm;
            }
            project_sphere(&mut v_new);
            project_sphere(&mut w_new);
            let trial = objective(&v_new, &w_new);
            if trial > value {
                v = v_new;
                w = w_new;
                value = trial;
                step *= 1.2;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    (value, v, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::seeds::stream_rng;

    #[test]
    fn grids_have_unit_points() {
        for dim in 1..=3 {
            let g = sphere_grid(dim, 10.0).unwrap();
            assert!(!g.is_empty());
            for p in &g {
                assert!((vec_norm(p) - 1.0).abs() < 1e-12);
            }
        }
        assert!(sphere_grid(4, 10.0).is_none());
    }

    #[test]
    fn bilinear_max_is_spectral_like() {
        // objective <v, a> * <w, c> has maximum |a| * |c| at v = +-a/|a|.
        let a = [3.0, 4.0];
        let c = [0.0, 2.0, 0.0];
        let obj = |v: &[f64], w: &[f64]| dot(v, &a) * dot(w, &c);
        let grad = |v: &[f64], w: &[f64], gv: &mut [f64], gw: &mut [f64]| {
            let dv = dot(w, &c);
            let dw = dot(v, &a);
            for (g, ai) in gv.iter_mut().zip(&a) {
                *g = ai * dv;
            }
            for (g, ci) in gw.iter_mut().zip(&c) {
                *g = ci * dw;
            }
        };
        let mut rng = stream_rng(3, "sphere-test", 0);
        let best =
            maximize_on_sphere_product(2, 3, obj, grad, &SphereSearchConfig::default(), &mut rng);
        assert!((best.value - 10.0).abs() < 1e-9, "got {}", best.value);
    }

    #[test]
    fn projection_handles_zero_vector() {
        let mut x = vec![0.0, 0.0];
        project_sphere(&mut x);
        assert_eq!(x, vec![1.0, 0.0]);
    }
}
