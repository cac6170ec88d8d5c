use fracbous::blocks::*;
use fracbous::calculus::{div, laplacian};
use fracbous::field::Shape;
use fracbous::products::outer_product;
use fracbous::time::TimeGrid;
use fracbous::DirectionFamily;

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn mikado_block_identities_d2() {
    let shape = Shape::new(2, 64).unwrap();
    let family = DirectionFamily::build(2).unwrap();
    for k in family.directions() {
        let b = build_mikado(k, 4.0, shape).unwrap();
        assert!((b.psi.l2_norm() - 1.0).abs() < 1e-12);
        assert!(b.psi.mean()[0].abs() < 1e-15);
        let lap = laplacian(&b.phi);
        assert!(lap.sub(&b.psi).unwrap().max_coeff() < 1e-12);
        let w = b.velocity();
        let stat = div(&outer_product(&w, &w).unwrap()).unwrap();
        assert!(stat.max_coeff() < 1e-12, "stationarity {}", stat.max_coeff());
        let dom = div(&b.omega).unwrap();
        assert!(dom.sub(&w).unwrap().max_coeff() < 1e-12);
        for (idx, mode) in shape.modes().iter().enumerate() {
            if b.psi.comp(0)[idx].norm() > 0.0 {
                assert_eq!(mode[0] * k[0] + mode[1] * k[1], 0);
            }
        }
    }
}

#[test]
fn mikado_block_identities_d3() {
    let shape = Shape::new(3, 24).unwrap();
    let family = DirectionFamily::build(3).unwrap();
    for k in family.directions() {
        let b = build_mikado(k, 2.0, shape).unwrap();
        assert!((b.psi.l2_norm() - 1.0).abs() < 1e-12);
        let w = b.velocity();
        let stat = div(&outer_product(&w, &w).unwrap()).unwrap();
        assert!(stat.max_coeff() < 1e-12);
        let dom = div(&b.omega).unwrap();
        assert!(dom.sub(&w).unwrap().max_coeff() < 1e-12);
    }
}

#[test]
fn mikado_rejects_unresolved_concentration() {
    let shape = Shape::new(2, 32).unwrap();
    assert!(build_mikado(&[1, 0], 8.0, shape).is_err());
    assert!(build_mikado(&[2, 0], 1.0, shape).is_err());
}

#[test]
fn mikado_lp_scaling_d2() {
    let shape = Shape::new(2, 256).unwrap();
    let mus = [4.0, 8.0, 16.0, 32.0];
    let blocks: Vec<_> = mus.iter().map(|&m| build_mikado(&[1, 0], m, shape).unwrap()).collect();
    for p in [1.0, 4.0, f64::INFINITY] {
        let norms: Vec<f64> = blocks.iter().map(|b| b.psi.lq_norm(p).unwrap()).collect();
        let expect = 0.5 - if p.is_infinite() { 0.0 } else { 1.0 / p };
        let got = slope(&mus, &norms);
        eprintln!("p = {p}: slope {got}, expected {expect}");
        assert!((got - expect).abs() <= 0.1 * expect.abs(), "p = {p}: {got} vs {expect}");
    }
}

#[test]
fn temporal_profile_identities() {
    for (l, nu) in [(1, 1), (4, 3), (16, 2)] {
        let prof = TemporalProfile::new(l, nu, 1.0).unwrap();
        let nodes = prof.recommended_nodes(0.0, 1.0, 64, 0.01);
        let grid = TimeGrid::new(1.0, nodes).unwrap();
        let l2: f64 = grid.nodes().iter().zip(grid.weights()).map(|(&t, w)| w * prof.g(t).powi(2)).sum();
        assert!((l2 - 1.0).abs() < 1e-6, "l = {l}: {l2}");
        assert!(prof.h(0.0).abs() < 1e-14);
        assert!(prof.h(1.0 - 1e-15).abs() < 1e-9);
        let hmax = grid.nodes().iter().map(|&t| prof.h(t).abs()).fold(0.0, f64::max);
        assert!(hmax <= 1.0);
        // dh matches a centred difference of h
        for &t in &[0.013, 0.2, 0.61] {
            let e = 1e-6;
            let fd = (prof.h(t + e) - prof.h(t - e)) / (2.0 * e);
            assert!((fd - prof.dh(t)).abs() < 1e-4 * (1.0 + prof.dh(t).abs()));
            let fd = (prof.g(t + e) - prof.g(t - e)) / (2.0 * e);
            assert!((fd - prof.dg(t)).abs() < 1e-4 * (1.0 + prof.dg(t).abs()));
        }
    }
}

#[test]
fn smoothstep_is_monotone_and_flat_at_ends() {
    let mut last = 0.0;
    for j in 0..=1000 {
        let x = j as f64 / 1000.0;
        let v = smoothstep(x);
        assert!(v >= last);
        last = v;
    }
    assert_eq!(smoothstep(0.0), 0.0);
    assert_eq!(smoothstep(1.0), 1.0);
    assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
}

#[test]
fn gluing_cutoffs_plateaus() {
    let c = GluingCutoffs::new(1.0, 0.01, 0.5).unwrap();
    let n = c.len();
    let tb = c.tau_bar;
    for i in 0..n {
        let (a, b) = (c.points[i], c.points[i + 1]);
        let mid = 0.5 * (a + b);
        assert_eq!(c.chi(i, mid), 1.0);
        if i > 0 {
            assert_eq!(c.chi(i, a + 0.49 * tb), 0.0);
            assert_eq!(c.chi(i, a + 1.01 * tb), 1.0);
        } else {
            assert_eq!(c.chi(i, 0.0), 1.0);
        }
        if i + 1 < n {
            assert_eq!(c.chi(i, b - 0.49 * tb), 0.0);
        } else {
            assert_eq!(c.chi(i, 1.0), 1.0);
        }
    }
}

#[test]
fn amplitude_cutoff_bounds() {
    let xi = AmplitudeCutoff::new(0.3, 0.2, 1e-8);
    let mut last = 0.0;
    for j in 0..2000 {
        let x = j as f64 * 1e-3;
        let v = xi.eval(x);
        assert!(v >= last - 1e-15);
        assert!(v >= 2.0 * 0.3 / 0.2 - 1e-12);
        assert!(x / v <= 0.2 + 1e-12);
        last = v;
    }
    assert!((xi.eval(1.0) - 10.0).abs() < 1e-12);
}
