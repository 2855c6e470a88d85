use remat_core::{solve_hsm, solve_msm, CostModel, Error, MemoryBudget, PolicyTable};
use serde_json::Value;

fn doc(p: &PolicyTable) -> Value {
    serde_json::from_slice(&p.serialize()).unwrap()
}

fn load(v: &Value) -> Result<PolicyTable, Error> {
    PolicyTable::deserialize(v.to_string().as_bytes())
}

#[test]
fn single_step_document() {
    let v = doc(&solve_hsm(1, 1).unwrap());
    assert_eq!(v["version"], 1);
    assert_eq!(v["algorithm"], "HSM");
    assert_eq!(v["cost"][1][1], 1);
    assert_eq!(v["cost"][1][0], -1);
}

#[test]
fn hsm_five_by_two() {
    let p = solve_hsm(5, 2).unwrap();
    let v = doc(&p);
    assert_eq!(v["cost"][5][2], 11);
    assert_eq!(load(&v).unwrap(), p);
}

#[test]
fn mixed_round_trip() {
    let model = CostModel::with_backward_ratio(5, 4, 3.0).unwrap();
    let p = solve_msm(30, MemoryBudget::new(40).unwrap(), model, true).unwrap();
    let v = doc(&p);
    assert_eq!(v["algorithm"], "MSM_DEDUP");
    assert_eq!(v["backward_ratio"], 3.0);
    let back = load(&v).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.cost_model().unwrap().backward_ratio, 3.0);
}

#[test]
fn monotonicity_violation_is_rejected() {
    let mut v = doc(&solve_hsm(4, 3).unwrap());
    v["cost"][3][2] = Value::from(7);
    let err = load(&v).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

#[test]
fn truncated_document_is_a_parse_error() {
    let bytes = solve_hsm(4, 3).unwrap().serialize();
    let err = PolicyTable::deserialize(&bytes[..bytes.len() / 2]).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn parse_errors_name_the_field() {
    let base = doc(&solve_hsm(4, 3).unwrap());

    let mut v = base.clone();
    v["cost"][2][1] = Value::from("x");
    match load(&v).unwrap_err() {
        Error::Parse { field, .. } => assert_eq!(field, "cost[2][1]"),
        e => panic!("{e}"),
    }

    let mut v = base.clone();
    v.as_object_mut().unwrap().remove("split");
    match load(&v).unwrap_err() {
        Error::Parse { field, .. } => assert_eq!(field, "split"),
        e => panic!("{e}"),
    }

    let mut v = base.clone();
    v["algorithm"] = Value::from("FOO");
    match load(&v).unwrap_err() {
        Error::Parse { field, .. } => assert_eq!(field, "algorithm"),
        e => panic!("{e}"),
    }

    let mut v = base.clone();
    v["version"] = Value::from(9);
    match load(&v).unwrap_err() {
        Error::Parse { field, .. } => assert_eq!(field, "version"),
        e => panic!("{e}"),
    }

    let mut v = base;
    v["cost"].as_array_mut().unwrap().pop();
    assert!(matches!(load(&v).unwrap_err(), Error::Parse { .. }));
}

#[test]
fn split_out_of_range_is_rejected() {
    let mut v = doc(&solve_hsm(6, 3).unwrap());
    v["split"][5][2] = Value::from(5);
    assert!(matches!(load(&v).unwrap_err(), Error::Validation(_)));
}

#[test]
fn mixed_policy_needs_its_model() {
    let model = CostModel::new(2, 1).unwrap();
    let mut v = doc(&solve_msm(4, MemoryBudget::new(8).unwrap(), model, false).unwrap());
    v["alpha"] = Value::Null;
    v["beta"] = Value::Null;
    assert!(matches!(load(&v).unwrap_err(), Error::Validation(_)));
}
