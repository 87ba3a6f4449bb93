//! Every chapter of the guide in `book/src`, included as module docs so
//! that `cargo test` runs its code listings.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/differentiation.md")]
pub mod differentiation {}

#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}

#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[cfg(test)]
mod schema {
    use fusekit::harness::presets;
    use fusekit::net::{toy_mlp, toy_transformer, NetworkSpec, TaskSpec, ToyDims};
    use fusekit::fusion::{self_deep_fuse, Strategy};
    use serde_json::{json, Value};

    fn load(name: &str) -> Value {
        let path = format!("{}/../../book/src/schema/{name}", env!("CARGO_MANIFEST_DIR"));
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    fn validator(name: &str) -> jsonschema::Validator {
        let resources = ["network_spec.schema.json", "task_spec.schema.json"]
            .map(|n| (n.to_string(), jsonschema::Resource::from_contents(load(n)).unwrap()));
        jsonschema::options().with_resources(resources.into_iter()).build(&load(name)).unwrap()
    }

    fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
        let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}\n{doc}");
    }

    #[test]
    fn serialized_networks_match_the_schema() {
        let v = validator("network_spec.schema.json");
        let net = toy_mlp();
        let p = net.init_params(0).unwrap();
        let fused = self_deep_fuse((&net, &p), 2, Strategy::Property, 0.0, 0).unwrap();
        let t = toy_transformer(ToyDims::small());
        let pt = t.init_params(0).unwrap();
        let fused_t = self_deep_fuse((&t, &pt), 2, Strategy::Property, 0.0, 0).unwrap();
        for spec in [net, t, fused.spec, fused_t.spec] {
            assert_valid(&v, &serde_json::to_value(&spec).unwrap());
        }
    }

    #[test]
    fn schema_and_parser_agree_on_rejections() {
        let v = validator("network_spec.schema.json");
        for bad in [
            json!({ "layers": [{ "kind": "dense", "in_dim": 2, "out_dim": 2 }] }),
            json!({ "layers": [{ "kind": "conv", "dim": 2 }] }),
            json!({ "layers": [{ "kind": "rms_norm_scale", "dim": 2 }], "extra": 1 }),
        ] {
            assert!(!v.is_valid(&bad), "{bad}");
            assert!(serde_json::from_value::<NetworkSpec>(bad).is_err());
        }
    }

    #[test]
    fn tasks_and_train_runs_match_the_schema() {
        let tv = validator("task_spec.schema.json");
        let lm = TaskSpec::ToySequenceLm { vocab: 8, seq_len: 4, train_samples: 16, eval_samples: 8, seed: 1 };
        for task in [presets::teacher_task(3), lm] {
            assert_valid(&tv, &serde_json::to_value(&task).unwrap());
        }
        assert!(!tv.is_valid(&json!({ "kind": "teacher_regression", "seed": 1 })));

        let rv = validator("train_run.schema.json");
        let run = json!({
            "network": presets::small_student(),
            "init_seed": 2,
            "train": presets::teacher_train_config(2),
        });
        assert_valid(&rv, &run);
    }
}
