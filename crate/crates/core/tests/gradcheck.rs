use snowformer::gradcheck::{check_model, ModelCheckOptions};
use snowformer::model::ModelConfig;

#[test]
fn tiny_model_loss_gradient_matches_finite_differences() {
    for seed in 0..2 {
        let report = check_model(&ModelConfig::tiny(), seed, &ModelCheckOptions::default()).unwrap();
        assert!(report.passed(), "{report:#?}");
        assert_eq!(report.coords.len(), 4);
    }
}

#[test]
fn inputs_outside_the_contract_are_rejected() {
    let opts = ModelCheckOptions {
        input: 40,
        ..Default::default()
    };
    assert!(check_model(&ModelConfig::tiny(), 0, &opts).is_err());
}
