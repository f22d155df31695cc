use promptfactor::encoding::{build_design_matrix, term_universe};
use promptfactor::pipeline::{load_manifest, cmd_score, LoadedManifest};
use promptfactor::regression::{fit_lasso, fit_lasso_warm, lasso_lambda_max};
use promptfactor::scoring::FitTarget;
use promptfactor::prompt_model::PromptModel;

#[test]
fn probe_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_manifest("../../assets/demo_manifest.json").unwrap();
    let mut m = loaded.manifest.clone();
    m.out_dir = dir.path().join("run");
    let loaded = LoadedManifest::from_value(m, loaded.base_dir().to_path_buf()).unwrap();
    let table = cmd_score(&loaded).unwrap();
    let model = PromptModel::from_file(loaded.model_path()).unwrap();
    let subs = model.enumerate().unwrap();
    let terms = term_universe(&model, &[1,2,3,4,5,6,7,8,9,10], 4).unwrap();
    let design = build_design_matrix(&model, &subs, &terms, 1).unwrap();
    let y = table.response_vector(design.row_keys(), FitTarget::Dcpmi).unwrap();
    let dense = design.to_dense();
    let lmax = lasso_lambda_max(&dense, &y);
    eprintln!("lambda_max = {lmax}");
    for lambda in [0.003, 0.0015, 0.0005, 0.0001, 0.00001] {
        let t = std::time::Instant::now();
        let fit = fit_lasso(&dense, &y, lambda).unwrap();
        eprintln!("cold lambda={lambda}: sweeps={} time={:?} nonzero={}", fit.sweeps, t.elapsed(),
            fit.coefficients.iter().skip(1).filter(|c| **c != 0.0).count());
    }
    // warm chain over 10 consecutive grid points
    let mut beta = vec![0.0; dense.n_cols];
    let mut lam = 0.0015f64;
    for _ in 0..10 {
        let t = std::time::Instant::now();
        let fit = fit_lasso_warm(&dense, &y, lam, Some(&beta)).unwrap();
        eprintln!("warm lambda={lam:.6}: sweeps={} time={:?}", fit.sweeps, t.elapsed());
        beta = fit.coefficients.clone();
        lam += 0.00001;
    }
}
