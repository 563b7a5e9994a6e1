use innerns::dirichlet::{log_simplex_volume, simplex_boundary_radius, CountTable, SimplexChart};
use innerns::inner::{build_atlas, AtlasDrawer, InnerConfig, RefreshMode};
use innerns::moments::estimate_moments;
use innerns::expr::FunctionalExpr;
use innerns::oracle::{ellipse_contour_area, ellipse_likelihood, ray_radius};
use innerns::pipeline::{run_dirichlet, DirichletConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ellipse_radius(e: &[f64]) -> f64 {
    ray_radius(&ellipse_likelihood, e[1].atan2(e[0]), 0.041)
}

fn ellipsoid(axes: Vec<f64>) -> impl Fn(&[f64]) -> f64 {
    move |e: &[f64]| {
        let q: f64 = e.iter().zip(&axes).map(|(x, a)| (x / a).powi(2)).sum();
        1.0 / q.sqrt()
    }
}

#[test]
fn ellipse_contour_volume() {
    let atlas = build_atlas(ellipse_radius, 2, vec![0.0; 2], &InnerConfig::new(200, 1)).unwrap();
    let v = atlas.log_v_star().exp();
    assert!((v - 8.162).abs() < 0.15, "{v}");
    assert!((ellipse_contour_area(0.041) - 8.162).abs() < 5e-3);
}

#[test]
fn simplex_volume_from_boundary_rays() {
    for m in [3usize, 4, 5] {
        let chart = SimplexChart::new(vec![1.0 / m as f64; m]).unwrap();
        let radius = |e: &[f64]| simplex_boundary_radius(&chart, e).unwrap();
        let atlas = build_atlas(radius, m - 1, vec![0.0; m - 1], &InnerConfig::new(200, m as u64)).unwrap();
        let err = atlas.log_v_star().ln() - log_simplex_volume(m).ln();
        assert!(err.abs() < 0.1, "M={m}: {err}");
    }
}

#[test]
fn homogeneity_of_degree_m() {
    for m in [2usize, 5, 10] {
        let axes: Vec<f64> = (0..m).map(|i| 1.0 + 0.2 * i as f64).collect();
        let base = ellipsoid(axes.clone());
        let c = 1.7;
        let scaled = move |e: &[f64]| c * ellipsoid(axes.clone())(e);
        let cfg = InnerConfig::new(60, 3);
        let a = build_atlas(base, m, vec![0.0; m], &cfg).unwrap();
        let b = build_atlas(scaled, m, vec![0.0; m], &cfg).unwrap();
        let ratio = (b.log_v_star().ln() - a.log_v_star().ln()).exp() / c.powi(m as i32);
        assert!((ratio - 1.0).abs() < 0.01, "m={m}: {ratio}");
    }
}

#[test]
fn draws_stay_inside_and_weights_normalize() {
    let radius = ellipsoid(vec![2.0, 1.0, 0.5]);
    let atlas = build_atlas(&radius, 3, vec![0.0; 3], &InnerConfig::new(80, 5)).unwrap();
    let total: f64 = atlas
        .differentials()
        .iter()
        .map(|d| (d.log_dv.ln() - atlas.log_v_star().ln()).exp())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut drawer = AtlasDrawer::new();
    for _ in 0..20_000 {
        let d = drawer.draw(&atlas, &mut rng);
        // spare draws run along the spare direction up to its own radius
        let r_q = match d.spare {
            Some(i) => atlas.safety()[d.q][i].radius,
            None => atlas.differentials()[d.q].radius,
        };
        assert!(d.rho <= r_q * (1.0 + 1e-12));
        // every atlas point lies inside the contour it was built on
        let norm = d.point.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let e: Vec<f64> = d.point.iter().map(|x| x / norm).collect();
            assert!(norm <= radius(&e) * (1.0 + 1e-9));
        }
    }
}

#[test]
fn refresh_after_shrinking_contour() {
    let radius = ellipsoid(vec![1.0, 2.0]);
    let atlas = build_atlas(&radius, 2, vec![0.0; 2], &InnerConfig::new(50, 6)).unwrap();
    let half = |e: &[f64]| 0.5 * radius(e);
    let full = atlas.refresh_radii(half, RefreshMode::Full).unwrap();
    let drop = atlas.log_v_star().ln() - full.log_v_star().ln();
    assert!((drop - 2.0 * 2f64.ln()).abs() < 1e-9);
    let interp = atlas.refresh_radii(half, RefreshMode::Interpolated { every: 10 }).unwrap();
    assert!((interp.log_v_star().ln() - full.log_v_star().ln()).abs() < 1e-9);
    let grow = |e: &[f64]| 2.0 * radius(e);
    assert!(atlas.refresh_radii(grow, RefreshMode::Full).is_err());
}

#[test]
fn uniform_dirichlet_first_component_converges() {
    // t1 under Dirichlet(1,1,1) has mean 1/3 and sd sqrt(2/36)
    let counts = CountTable::new(vec![1.0; 3]).unwrap();
    let u = FunctionalExpr::parse("t1", 3).unwrap();
    let means: Vec<f64> = (0..6)
        .map(|seed| {
            let cfg = DirichletConfig::new(seed).with_objects(200).with_inner_objects(200);
            let run = run_dirichlet(&counts, &cfg).unwrap();
            estimate_moments(&run.result, &u, seed).unwrap().m1
        })
        .collect();
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    let se = (var / means.len() as f64).sqrt().max(1e-3);
    assert!((mean - 1.0 / 3.0).abs() < 4.0 * se, "{mean} +- {se}");
}

#[test]
fn dirichlet_moments_match_marginals() {
    let counts = CountTable::new(vec![5.0, 3.0, 2.0]).unwrap();
    let u = FunctionalExpr::parse("t1", 3).unwrap();
    let mut m1 = Vec::new();
    let mut var = Vec::new();
    for seed in 0..3 {
        let cfg = DirichletConfig::new(seed).with_objects(100).with_inner_objects(300);
        let run = run_dirichlet(&counts, &cfg).unwrap();
        let r = estimate_moments(&run.result, &u, seed).unwrap();
        m1.push(r.m1);
        var.push(r.variance);
    }
    m1.sort_by(f64::total_cmp);
    var.sort_by(f64::total_cmp);
    assert!((m1[1] - 0.5).abs() < 0.03, "{m1:?}");
    assert!((var[1] - 0.25 / 11.0).abs() < 0.01, "{var:?}");
}
