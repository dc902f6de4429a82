use elastic_core::costmodel::{deployment_memory, sweep, tokens_required, Deployment, FamilyPlan, Method};
use elastic_core::Error;

fn minitron(n: usize) -> FamilyPlan {
    FamilyPlan { tokens_explore: Some(240e9), tokens_kd: Some(135e9), ..FamilyPlan::new(Method::Minitron, n) }
}

#[test]
fn minitron_two_models_need_750b_tokens() {
    assert_eq!(tokens_required(&minitron(2)).unwrap(), 750e9);
    assert_eq!(tokens_required(&minitron(0)).unwrap(), 0.0);
}

#[test]
fn elastic_tokens_ignore_family_size() {
    for n in [1, 2, 3, 10] {
        let p = FamilyPlan { tokens_elastic_kd: Some(110e9), ..FamilyPlan::new(Method::Elastic, n) };
        assert_eq!(tokens_required(&p).unwrap(), 110e9);
    }
    let ratio = tokens_required(&minitron(2)).unwrap() / 110e9;
    assert!((ratio - 6.818).abs() < 1e-3);
}

#[test]
fn missing_fields_are_rejected() {
    let p = FamilyPlan { tokens_explore: Some(1.0), ..FamilyPlan::new(Method::Minitron, 2) };
    assert_eq!(tokens_required(&p).unwrap_err(), Error::MissingField("tokens_kd"));
    assert_eq!(tokens_required(&FamilyPlan::new(Method::Elastic, 2)).unwrap_err(), Error::MissingField("tokens_elastic_kd"));
    assert!(deployment_memory(&FamilyPlan::new(Method::Elastic, 2), Deployment::Nested).is_err());
}

#[test]
fn pretraining_sums_per_model_tokens() {
    let p = FamilyPlan { tokens_pretrain: vec![20e12, 20e12, 15e12], ..FamilyPlan::new(Method::Pretrain, 3) };
    assert_eq!(tokens_required(&p).unwrap(), 55e12);
}

#[test]
fn nested_memory_of_three_models_is_24gb() {
    let p = FamilyPlan { sizes: vec![6e9, 9e9, 12e9], ..FamilyPlan::new(Method::Elastic, 3) };
    assert_eq!(deployment_memory(&p, Deployment::Nested).unwrap(), 24e9);
}

#[test]
fn separate_memory_of_two_models_is_42gb() {
    let p = FamilyPlan { sizes: vec![9e9, 12e9], ..FamilyPlan::new(Method::Minitron, 2) };
    assert_eq!(deployment_memory(&p, Deployment::Separate).unwrap(), 42e9);
    let saving: f64 = 1.0 - 24e9 / 42e9;
    assert!((saving - 0.43).abs() < 0.005);
}

#[test]
fn single_model_deployments_agree() {
    let p = FamilyPlan { sizes: vec![7e9], ..FamilyPlan::new(Method::Elastic, 1) };
    assert_eq!(deployment_memory(&p, Deployment::Separate).unwrap(), deployment_memory(&p, Deployment::Nested).unwrap());
}

#[test]
fn nested_memory_ignores_smaller_models_and_counts_router() {
    let base = FamilyPlan { sizes: vec![12e9], eps_router: 0.01, ..FamilyPlan::new(Method::Elastic, 1) };
    let more = FamilyPlan { sizes: vec![1e9, 12e9, 5e9], ..base.clone() };
    let a = deployment_memory(&base, Deployment::Nested).unwrap();
    assert_eq!(a, deployment_memory(&more, Deployment::Nested).unwrap());
    assert!((a - 24.24e9).abs() < 1.0);
    let bad = FamilyPlan { eps_router: 0.02, ..base };
    assert!(deployment_memory(&bad, Deployment::Nested).is_err());
}

#[test]
fn sweep_is_linear_for_minitron_and_flat_for_elastic() {
    let rows = sweep(10, 240e9, 135e9, 110e9, 12e9, 2.0, 0.0).unwrap();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        match r.method {
            Method::Minitron => assert_eq!(r.tokens, r.n as f64 * 375e9),
            Method::Elastic => {
                assert_eq!(r.tokens, 110e9);
                assert_eq!(r.memory_bytes, 24e9);
            }
            Method::Pretrain => unreachable!(),
        }
    }
    let mini: Vec<f64> = rows.iter().filter(|r| r.method == Method::Minitron).map(|r| r.memory_bytes).collect();
    assert!(mini.windows(2).all(|w| w[1] > w[0]));
}
