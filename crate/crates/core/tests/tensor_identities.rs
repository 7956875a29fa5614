use amt_core::tensor_ops::{
    cp_compose, diag_matrix, fold, khatri_rao, kronecker, unfold, vec, vec_rows, CpFactors, Tensor3,
};
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn max_abs_diff<'a>(a: impl ExactSizeIterator<Item = &'a f64>, b: impl ExactSizeIterator<Item = &'a f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Column index of element `(i, j, k)` in the mode-`n` unfolding, spelled out.
fn unfold_oracle(t: &Array3<f64>, mode: usize) -> Array2<f64> {
    let (i_n, j_n, k_n) = t.dim();
    let (rows, cols) = [(i_n, j_n * k_n), (j_n, i_n * k_n), (k_n, i_n * j_n)][mode];
    let mut out = Array2::zeros((rows, cols));
    for i in 0..i_n {
        for j in 0..j_n {
            for k in 0..k_n {
                let (r, c) = match mode {
                    0 => (i, j * k_n + k),
                    1 => (j, i * k_n + k),
                    _ => (k, i * j_n + j),
                };
                out[[r, c]] = t[[i, j, k]];
            }
        }
    }
    out
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..5)
}

proptest! {
    #[test]
    fn fold_inverts_unfold((i, j, k) in dims(), seed in any::<u64>(), mode in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor3::new(Array3::from_shape_fn((i, j, k), |_| rng.gen_range(-5.0..5.0))).unwrap();
        let m = unfold(&t, mode).unwrap();
        prop_assert_eq!(&m, &unfold_oracle(t.data(), mode));
        prop_assert_eq!(fold(&m, mode, (i, j, k)).unwrap(), t);
    }

    #[test]
    fn cp_unfoldings_are_khatri_rao_products((i, j, k) in dims(), r in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (mat(i, r, &mut rng), mat(j, r, &mut rng), mat(k, r, &mut rng));
        let explicit = Array3::from_shape_fn((i, j, k), |(x, y, z)| {
            (0..r).map(|q| a[[x, q]] * b[[y, q]] * c[[z, q]]).sum::<f64>()
        });
        let t = cp_compose(&CpFactors::new(a.clone(), b.clone(), c.clone()).unwrap()).unwrap();
        prop_assert!(max_abs_diff(t.data().iter(), explicit.iter()) < 1e-12);
        let rhs = [
            a.dot(&khatri_rao(&b.view(), &c.view()).unwrap().t()),
            b.dot(&khatri_rao(&a.view(), &c.view()).unwrap().t()),
            c.dot(&khatri_rao(&a.view(), &b.view()).unwrap().t()),
        ];
        for (mode, m) in rhs.iter().enumerate() {
            let lhs = unfold_oracle(&explicit, mode);
            prop_assert!(max_abs_diff(lhs.iter(), m.iter()) < 1e-10);
        }
    }

    #[test]
    fn vec_of_triple_product(p in 1usize..5, q in 1usize..5, m in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, x, b) = (mat(p, m, &mut rng), mat(m, n, &mut rng), mat(n, q, &mut rng));
        let axb = a.dot(&x).dot(&b);
        let row_major = kronecker(&a.view(), &b.t()).dot(&vec_rows(&x.view()));
        prop_assert!(max_abs_diff(vec_rows(&axb.view()).iter(), row_major.iter()) < 1e-10);
        let col_major = kronecker(&b.t(), &a.view()).dot(&vec(&x.view()));
        prop_assert!(max_abs_diff(vec(&axb.view()).iter(), col_major.iter()) < 1e-10);
    }

    #[test]
    fn vec_with_diagonal_middle(p in 1usize..6, q in 1usize..6, r in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (mat(p, r, &mut rng), mat(r, q, &mut rng));
        let d = Array1::from_shape_fn(r, |_| rng.gen_range(-1.0..1.0));
        let adb = a.dot(&diag_matrix(&d.view())).dot(&b);
        let row_major = khatri_rao(&a.view(), &b.t()).unwrap().dot(&d);
        prop_assert!(max_abs_diff(vec_rows(&adb.view()).iter(), row_major.iter()) < 1e-10);
        let col_major = khatri_rao(&b.t(), &a.view()).unwrap().dot(&d);
        prop_assert!(max_abs_diff(vec(&adb.view()).iter(), col_major.iter()) < 1e-10);
    }

    #[test]
    fn khatri_rao_columns_are_kronecker_columns(i in 1usize..5, j in 1usize..5, r in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (mat(i, r, &mut rng), mat(j, r, &mut rng));
        let kr = khatri_rao(&a.view(), &b.view()).unwrap();
        let kron = kronecker(&a.view(), &b.view());
        for col in 0..r {
            prop_assert_eq!(kr.column(col), kron.column(col * r + col));
        }
    }
}
