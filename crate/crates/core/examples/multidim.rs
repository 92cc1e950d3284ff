//! Vector random effects: two drift functions, a two-component mixture of
//! bivariate normals, and the closed-form likelihood of each subject.

use mixfx::multidim::{log_lambda_multi, simulate_multi, MvMixtureParams, VecSdeModel};
use mixfx::simulate::SubjectRng;
use mixfx::SubjectDesign;
use nalgebra::{DMatrix, DVector};

fn main() -> mixfx::Result<()> {
    let model = VecSdeModel::affine();
    let theta = MvMixtureParams::new(
        vec![0.5, 0.5],
        vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![0.5, -0.5])],
        vec![DMatrix::identity(2, 2) * 0.2, DMatrix::from_row_slice(2, 2, &[0.1, 0.03, 0.03, 0.1])],
    );
    let design = SubjectDesign::new(1.0, 2.0);
    for r in 0..5 {
        let mut rng = SubjectRng::new(21, r);
        let (phi, _, s) = simulate_multi(&model, &theta, &design, 1e-3, &mut rng)?;
        println!(
            "subject {r}: phi = ({:.3}, {:.3}), U = ({:.3}, {:.3}), log lambda = {:.4}",
            phi[0],
            phi[1],
            s.u[0],
            s.u[1],
            log_lambda_multi(&s, &theta)?
        );
    }
    Ok(())
}
