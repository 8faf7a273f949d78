//! Dense networks with exact reverse-mode gradients, first-order optimizers,
//! the tanh-squashed Gaussian policy head and a binary checkpoint format.

mod checkpoint;
mod dense;
mod gaussian;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dense::{Activation, Dense, DenseNet, ForwardCache};
pub use gaussian::{squashed_gaussian_sample, squashed_log_prob, SquashedSample, LOG_STD_MAX, LOG_STD_MIN};
pub use optim::{AdamState, Optimizer, OptimizerKind};

/// Anything exposing its trainable parameters as an ordered list of slices.
///
/// Gradients are stored in a value of the same type, so optimizers can walk
/// parameters and gradients in lockstep.
pub trait Parameters {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64]));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |s| n += s.len());
        n
    }
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.param_count());
    p.for_each_param(&mut |s| out.extend_from_slice(s));
    out
}

/// Overwrites the parameters of `p` from a flat vector in traversal order.
pub fn assign_flat<P: Parameters + ?Sized>(p: &mut P, flat: &[f64]) {
    let mut offset = 0;
    p.for_each_param_mut(&mut |s| {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
}

pub fn zero_params<P: Parameters + ?Sized>(p: &mut P) {
    p.for_each_param_mut(&mut |s| s.iter_mut().for_each(|v| *v = 0.0));
}

/// FNV-1a over the parameter bit patterns; cheap change detection in tests
/// and logs.
pub fn param_hash<P: Parameters + ?Sized>(p: &P) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    p.for_each_param(&mut |s| {
        for v in s {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    });
    h
}

/// `C = A·B + beta·C` for row-major `C` (`m × n`, row stride `rsc`), with
/// arbitrary strides on `A` (`m × k`) and `B` (`k × n`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the debug assertions above spell out the extents matrixmultiply
    // reads and writes; every caller passes buffers sized from the same dims.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}
