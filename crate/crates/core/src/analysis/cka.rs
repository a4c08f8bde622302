use rsd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear CKA value; `degenerate` marks an input with no variance, for
/// which the value is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cka {
    pub value: f64,
    pub degenerate: bool,
}

fn centered(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in x.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    x.data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect()
}

/// Squared Frobenius norm of `aᵀb` for row-major `a[n×p]`, `b[n×q]`.
fn cross_norm_sq(a: &[f64], p: usize, b: &[f64], q: usize) -> f64 {
    let n = a.len() / p.max(1);
    let mut m = vec![0.0; p * q];
    for i in 0..n {
        let (ra, rb) = (&a[i * p..(i + 1) * p], &b[i * q..(i + 1) * q]);
        for (j, &av) in ra.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (mv, &bv) in m[j * q..(j + 1) * q].iter_mut().zip(rb) {
                *mv += av * bv;
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

fn check(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.rank() != 2 || y.rank() != 2 {
        return Err(Error::Config(format!(
            "CKA takes matrices, got shapes {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.shape()[0] != y.shape()[0] {
        return Err(Error::Config(format!(
            "CKA inputs need the same number of rows, got {} and {}",
            x.shape()[0],
            y.shape()[0]
        )));
    }
    if x.shape()[0] < 2 {
        return Err(Error::Config("CKA needs at least two examples".into()));
    }
    Ok(())
}

/// `‖Ȳᵀ X̄‖_F² / (‖X̄ᵀX̄‖_F · ‖ȲᵀȲ‖_F)` over column-centered inputs with the
/// same number of rows. Column counts may differ.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<Cka> {
    check(x, y)?;
    let (p, q) = (x.shape()[1], y.shape()[1]);
    let (xc, yc) = (centered(x), centered(y));
    let xx = cross_norm_sq(&xc, p, &xc, p).sqrt();
    let yy = cross_norm_sq(&yc, q, &yc, q).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Ok(Cka {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cka {
        value: cross_norm_sq(&yc, q, &xc, p) / (xx * yy),
        degenerate: false,
    })
}
