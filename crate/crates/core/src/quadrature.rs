//! Gauss-Hermite quadrature nodes and weights.
//!
//! Nodes are found by Newton iteration on the orthonormal Hermite
//! recurrence (stable for the orders used here); weights follow from the
//! derivative at each root. The standard-normal form feeds the sigma
//! point initialization.

/// Nodes and weights for `int e^{-x^2} f(x) dx ~= sum w_i f(t_i)`,
/// returned in ascending node order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    const EPS: f64 = 3e-14;
    const PIM4: f64 = 0.7511255444649425;
    const MAXIT: usize = 20;

    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => {
                let a = (2 * n + 1) as f64;
                a.sqrt() - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..MAXIT {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - (((j - 1) as f64) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // roots were filled descending; flip to ascending
    x.reverse();
    w.reverse();
    (x, w)
}

/// Nodes and weights for expectations under the standard normal:
/// `E[f(eps)] ~= sum omega_j f(xi_j)` with `xi = sqrt(2) t`,
/// `omega = w / sqrt(pi)`.
pub fn standard_normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite(n);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let xi = t.iter().map(|&v| std::f64::consts::SQRT_2 * v).collect();
    let omega = w.iter().map(|&v| v / sqrt_pi).collect();
    (xi, omega)
}
