//! Truncated derivative jets in one variable.
//!
//! A jet holds `[f, f', f'', f''', f'''']` of some quantity with respect to the
//! scalar input `x` of a sub-network. Jets are pushed forward through affine maps
//! (linear), through elementwise activations (Faa di Bruno) and through the
//! boundary envelope (Leibniz). The reverse maps of the last two are provided for
//! parameter gradients of derivative outputs.

#[allow(unused_imports)] // inherent float math is std-only on older toolchains
use num_traits::Float;

/// Highest x-derivative order carried by a jet.
pub const MAX_ORDER: usize = 4;
pub const JET_LEN: usize = MAX_ORDER + 1;

pub type Jet = [f64; JET_LEN];

const BINOM: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0, 0.0],
    [1.0, 5.0, 10.0, 10.0, 5.0, 1.0],
];

#[inline]
pub fn binom(n: usize, k: usize) -> f64 {
    BINOM[n][k]
}

/// `tanh^(n)(z)` as polynomials in `t = tanh z`.
pub fn tanh_derivs(z: f64) -> [f64; 6] {
    let t = z.tanh();
    let t2 = t * t;
    [
        t,
        1.0 - t2,
        t * (-2.0 + 2.0 * t2),
        -2.0 + t2 * (8.0 - 6.0 * t2),
        t * (16.0 + t2 * (-40.0 + 24.0 * t2)),
        16.0 + t2 * (-136.0 + t2 * (240.0 - 120.0 * t2)),
    ]
}

pub fn sin_derivs(z: f64) -> [f64; 6] {
    let (s, c) = z.sin_cos();
    [s, c, -s, -c, s, c]
}

/// Faa di Bruno: derivatives of `f(z(x))` up to `order`, given `fd[n] = f^(n)(z0)`
/// and the jet `z` of the inner function.
#[inline]
pub fn compose(fd: &[f64], z: &Jet, order: usize) -> Jet {
    let mut y = [0.0; JET_LEN];
    y[0] = fd[0];
    if order >= 1 {
        y[1] = fd[1] * z[1];
    }
    if order >= 2 {
        let z1 = z[1];
        y[2] = fd[2] * z1 * z1 + fd[1] * z[2];
        if order >= 3 {
            y[3] = fd[3] * z1 * z1 * z1 + 3.0 * fd[2] * z1 * z[2] + fd[1] * z[3];
        }
        if order >= 4 {
            let z12 = z1 * z1;
            y[4] = fd[4] * z12 * z12
                + 6.0 * fd[3] * z12 * z[2]
                + fd[2] * (4.0 * z1 * z[3] + 3.0 * z[2] * z[2])
                + fd[1] * z[4];
        }
    }
    y
}

/// Reverse of [`compose`]: maps an adjoint on the output jet to an adjoint on the
/// input jet. Uses `dy_k/dz_i = C(k, i) * (f'(z(x)))^(k - i)`, so `fd` must hold
/// one derivative more than `order`.
#[inline]
pub fn compose_adjoint(fd: &[f64], z: &Jet, adj_y: &Jet, order: usize) -> Jet {
    let g = compose(&fd[1..], z, order);
    let mut adj_z = [0.0; JET_LEN];
    for i in 0..=order {
        let mut acc = 0.0;
        for k in i..=order {
            acc += adj_y[k] * binom(k, i) * g[k - i];
        }
        adj_z[i] = acc;
    }
    adj_z
}

/// Leibniz rule for the product of two jets.
#[inline]
pub fn product(a: &Jet, b: &Jet, order: usize) -> Jet {
    let mut y = [0.0; JET_LEN];
    for n in 0..=order {
        let mut acc = 0.0;
        for k in 0..=n {
            acc += binom(n, k) * a[k] * b[n - k];
        }
        y[n] = acc;
    }
    y
}

/// Adjoint of `product(a, b)` with respect to `b`, holding `a` fixed.
#[inline]
pub fn product_adjoint(a: &Jet, adj_y: &Jet, order: usize) -> Jet {
    let mut adj_b = [0.0; JET_LEN];
    for k in 0..=order {
        let mut acc = 0.0;
        for n in k..=order {
            acc += adj_y[n] * binom(n, n - k) * a[n - k];
        }
        adj_b[k] = acc;
    }
    adj_b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_derivs(f: &dyn Fn(f64) -> f64, z: f64, n: usize) -> f64 {
        // repeated central differences, enough for a loose check of the polynomials
        match n {
            0 => f(z),
            _ => {
                let h = 1e-3;
                (fd_derivs(f, z + h, n - 1) - fd_derivs(f, z - h, n - 1)) / (2.0 * h)
            }
        }
    }

    #[test]
    fn tanh_polynomials_match_differences() {
        for &z in &[-1.3, -0.2, 0.0, 0.7, 2.1] {
            let d = tanh_derivs(z);
            for n in 0..=4 {
                let approx = fd_derivs(&|x: f64| x.tanh(), z, n);
                assert!(
                    (d[n] - approx).abs() < 1e-4 * (1.0 + approx.abs()),
                    "n={n} z={z}"
                );
            }
            // f5 from differencing f4
            let h = 1e-5;
            let f5 = (tanh_derivs(z + h)[4] - tanh_derivs(z - h)[4]) / (2.0 * h);
            assert!((d[5] - f5).abs() < 1e-6 * (1.0 + f5.abs()));
        }
    }

    #[test]
    fn compose_matches_closed_form() {
        // f = sin, z(x) = x^2 at x = 0.8: derivatives of sin(x^2)
        let x: f64 = 0.8;
        let z: Jet = [x * x, 2.0 * x, 2.0, 0.0, 0.0];
        let y = compose(&sin_derivs(z[0]), &z, 4);
        let s = (x * x).sin();
        let c = (x * x).cos();
        let d1 = 2.0 * x * c;
        let d2 = 2.0 * c - 4.0 * x * x * s;
        let d3 = -12.0 * x * s - 8.0 * x.powi(3) * c;
        let d4 = -12.0 * s - 48.0 * x * x * c + 16.0 * x.powi(4) * s;
        for (got, want) in y.iter().zip([s, d1, d2, d3, d4]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn compose_adjoint_is_transpose_of_linearization() {
        let z: Jet = [0.3, -0.7, 1.1, 0.4, -0.9];
        let adj: Jet = [0.5, -1.0, 0.25, 2.0, -0.3];
        let fd = tanh_derivs(z[0]);
        let adj_z = compose_adjoint(&fd, &z, &adj, 4);
        let h = 1e-6;
        for i in 0..=4 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let yp = compose(&tanh_derivs(zp[0]), &zp, 4);
            let ym = compose(&tanh_derivs(zm[0]), &zm, 4);
            let dir: f64 = (0..=4).map(|k| adj[k] * (yp[k] - ym[k]) / (2.0 * h)).sum();
            assert!(
                (dir - adj_z[i]).abs() < 1e-7,
                "i={i}: {dir} vs {}",
                adj_z[i]
            );
        }
    }

    #[test]
    fn product_adjoint_matches() {
        let a: Jet = [1.5, -0.2, 0.7, 0.0, 0.3];
        let b: Jet = [0.1, 0.9, -1.2, 0.4, 2.0];
        let adj: Jet = [1.0, 0.5, -0.5, 0.25, 1.0];
        let adj_b = product_adjoint(&a, &adj, 4);
        for i in 0..=4 {
            let mut e = [0.0; JET_LEN];
            e[i] = 1.0;
            let y = product(&a, &e, 4);
            let dir: f64 = (0..=4).map(|k| adj[k] * y[k]).sum();
            assert!((dir - adj_b[i]).abs() < 1e-14);
        }
        let y = product(&a, &b, 2);
        assert!((y[2] - (a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2])).abs() < 1e-15);
    }
}
