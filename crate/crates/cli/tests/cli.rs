use std::path::{Path, PathBuf};
use std::process::Command;

use regex::Regex;
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn chart(name: &str) -> String {
    root().join("charts").join(format!("{name}.json")).display().to_string()
}

struct Run {
    code: i32,
    json: Value,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_carnotkit"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let json = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("not one JSON document ({e}): {stdout}"));
    Run {
        code: out.status.code().unwrap(),
        json,
        stdout,
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Checks `value` against the subset of JSON Schema used by the shipped
/// schemas: type, enum, required, properties, additionalProperties, items,
/// anyOf, pattern, minimum.
fn conforms(value: &Value, schema: &Value, path: &str) -> Result<(), String> {
    let Some(s) = schema.as_object() else {
        return Ok(());
    };
    if let Some(t) = s.get("type") {
        let types: Vec<&str> = match t {
            Value::String(x) => vec![x.as_str()],
            Value::Array(xs) => xs.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            "integer" => value.is_i64() || value.is_u64(),
            "number" => value.is_number(),
            _ => false,
        });
        if !ok {
            return Err(format!("{path}: expected {types:?}, found {value}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(value) {
            return Err(format!("{path}: {value} not in {options:?}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("anyOf") {
        let errors: Vec<String> = options.iter().filter_map(|o| conforms(value, o, path).err()).collect();
        if errors.len() == options.len() {
            return Err(format!("{path}: no alternative matches: {errors:?}"));
        }
    }
    if let (Some(Value::String(p)), Some(text)) = (s.get("pattern"), value.as_str()) {
        if !Regex::new(p).unwrap().is_match(text) {
            return Err(format!("{path}: {text:?} does not match {p}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), value.as_f64()) {
        if x < min {
            return Err(format!("{path}: {x} < {min}"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(Value::Array(req)) = s.get("required") {
            for r in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(r) {
                    return Err(format!("{path}: missing {r}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => conforms(v, sub, &format!("{path}.{k}"))?,
                None => match s.get("additionalProperties") {
                    Some(Value::Bool(false)) => return Err(format!("{path}: unexpected key {k}")),
                    Some(sub @ Value::Object(_)) => conforms(v, sub, &format!("{path}.{k}"))?,
                    _ => {}
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (s.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            conforms(v, items, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn assert_schema(name: &str, value: &Value) {
    let path = root().join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    if let Err(e) = conforms(value, &schema, "$") {
        panic!("output does not match {name} schema: {e}");
    }
}

fn write_temp(name: &str, text: &str) -> String {
    let dir = std::env::temp_dir().join(format!("carnotkit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn validator_rejects_bad_documents() {
    let schema: Value = serde_json::json!({
        "type": "object", "required": ["a"], "additionalProperties": false,
        "properties": {"a": {"type": "string", "pattern": "^[0-9]+$"}}
    });
    assert!(conforms(&serde_json::json!({"a": "12"}), &schema, "$").is_ok());
    assert!(conforms(&serde_json::json!({"a": "x"}), &schema, "$").is_err());
    assert!(conforms(&serde_json::json!({}), &schema, "$").is_err());
    assert!(conforms(&serde_json::json!({"a": "1", "b": 2}), &schema, "$").is_err());
}

#[test]
fn shipped_charts_match_schema() {
    for entry in std::fs::read_dir(root().join("charts")).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert_schema("chart-spec", &serde_json::from_str(&text).unwrap());
    }
}

#[test]
fn validate_heisenberg_passes() {
    let r = run(&["validate", &chart("heisenberg")]);
    assert_eq!(r.code, 0);
    assert_eq!(r.json["pass"], true);
    assert_eq!(r.json["weights"], serde_json::json!([1, 1, 2]));
    assert_schema("validate", &r.json);
}

#[test]
fn validate_broken_engel_fails_with_witness() {
    let r = run(&["validate", &chart("broken-engel")]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["pass"], false);
    let w = &r.json["witnesses"][0]["locant"];
    assert_eq!((w["a"].as_u64(), w["b"].as_u64(), w["c"].as_u64()), (Some(0), Some(1), Some(2)));
    assert_schema("validate", &r.json);
}

#[test]
fn osculate_heisenberg_single_bracket() {
    let r = run(&["osculate", &chart("heisenberg"), "--point", "0,0,0"]);
    assert_eq!(r.code, 0);
    let brackets = r.json["brackets"].as_array().unwrap();
    assert_eq!(brackets.len(), 1);
    assert_eq!(brackets[0], serde_json::json!({"a": 0, "b": 1, "coeffs": {"2": "1"}}));
    assert_schema("osculate", &r.json);
    let bad = run(&["osculate", &chart("broken-engel")]);
    assert_eq!(bad.code, 1);
    assert_schema("osculate", &bad.json);
}

#[test]
fn privileged_and_carnot() {
    let r = run(&["privileged", &chart("engel"), "--point", "1,0,-1/2,2"]);
    assert_eq!(r.code, 0);
    assert_schema("privileged", &r.json);
    let orders: Vec<u64> = r.json["vanishing_orders"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["value"].as_u64().unwrap())
        .collect();
    assert_eq!(orders, vec![1, 1, 2, 3]);

    // x, y, z − ½xy are Carnot coordinates at the origin
    let carnot = write_temp(
        "carnot.json",
        r#"[[{"coeff":"1","exps":[1,0,0]}],[{"coeff":"1","exps":[0,1,0]}],
            [{"coeff":"1","exps":[0,0,1]},{"coeff":"-1/2","exps":[1,1,0]}]]"#,
    );
    let ok = run(&["carnot-check", &chart("heisenberg"), "--coords", &carnot]);
    assert_eq!(ok.code, 0);
    assert_eq!(ok.json["carnot"], true);
    assert_schema("carnot-check", &ok.json);
    let raw = write_temp(
        "raw.json",
        r#"[[{"coeff":"1","exps":[1,0,0]}],[{"coeff":"1","exps":[0,1,0]}],[{"coeff":"1","exps":[0,0,1]}]]"#,
    );
    let bad = run(&["carnot-check", &chart("heisenberg"), "--coords", &raw]);
    assert_eq!(bad.code, 1);
    assert_eq!(bad.json["witness"]["index"], 2);
    assert_schema("carnot-check", &bad.json);
}

#[test]
fn euler_check_discriminates() {
    let model = run(&["euler-check", &chart("heisenberg-point")]);
    assert_eq!(model.code, 0);
    let perturbed = run(&["euler-check", &chart("heisenberg-point"), "--field", "perturbed"]);
    assert_eq!(perturbed.code, 0);
    let doubled = run(&["euler-check", &chart("heisenberg-point"), "--field", "doubled"]);
    assert_eq!(doubled.code, 1);
    assert_eq!(doubled.json["witnesses"][0]["locant"]["q"], 1);
    for r in [&model, &perturbed, &doubled] {
        assert_schema("euler-check", &r.json);
    }
}

#[test]
fn tube_endpoints_and_domain_exit() {
    let samples = write_temp("samples.json", r#"[{"y":[],"z":[0.1,-0.2,1.0]},{"y":[],"z":[0,0,2.5]}]"#);
    let r = run(&[
        "tube",
        &chart("heisenberg-point"),
        "--field",
        "perturbed",
        "--samples",
        &samples,
        "--bounds",
        "100",
    ]);
    assert_eq!(r.code, 1);
    assert_schema("tube", &r.json);
    let z = r.json["endpoints"][0]["end"]["z"][2].as_f64().unwrap();
    assert!((z - 2.0).abs() < 1e-9);
    assert_eq!(r.json["endpoints"][1]["status"], "domain_exit");

    let one = write_temp("one.json", r#"[{"y":[],"z":[0.1,-0.2,1.0]}]"#);
    let ok = run(&["tube", &chart("heisenberg-point"), "--field", "perturbed", "--samples", &one]);
    assert_eq!(ok.code, 0);
}

#[test]
fn tube_verify_reports_residuals() {
    let r = run(&["tube-verify", &chart("heisenberg-point"), "--field", "perturbed"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    assert_schema("tube-verify", &r.json);
    assert_eq!(r.json["scaling_samples"], 20);
    let x = run(&["tube-verify", &chart("heisenberg-xaxis")]);
    assert_eq!(x.code, 0, "{}", x.stdout);
}

#[test]
fn non_adapted_chart_is_rejected() {
    let path = write_temp(
        "raw-xaxis.json",
        &std::fs::read_to_string(chart("heisenberg-zaxis")).unwrap().replace("\"normal_vars\": [\n    0,\n    1\n  ]", "\"normal_vars\": [1, 2]"),
    );
    let r = run(&["tube-verify", &path]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["kind"], "not_adapted");
    assert_schema("error", &r.json);
}

#[test]
fn groupoid_subcommands() {
    let r = run(&["tg-compose", &chart("heisenberg"), "--xi", "1,0,0", "--eta", "0,1,0"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.json["result"]["xi"], serde_json::json!(["1", "1", "1/2"]));
    assert_schema("tg-compose", &r.json);
    let pair = run(&[
        "tg-compose",
        &chart("heisenberg"),
        "--lambda",
        "1/2",
        "--p",
        "1,2,3",
        "--q",
        "0,1,0",
        "--w",
        "5,-1,2",
    ]);
    assert_eq!(pair.json["result"]["q"], serde_json::json!(["5", "-1", "2"]));
    assert_schema("tg-compose", &pair.json);

    let conv = run(&["tg-converge", &chart("heisenberg-twisted")]);
    assert_eq!(conv.code, 0);
    assert_schema("tg-converge", &conv.json);
    let flat = run(&["tg-converge", &chart("flat"), "--xi", "1/3,1/5,1", "--eta", "1,-2,3/7"]);
    assert_eq!(flat.json["runs"][0]["identically_zero"], true);
}

#[test]
fn output_is_deterministic() {
    let args = ["tg-converge", &chart("heisenberg-twisted"), "--random", "3"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
    let args = ["privileged", &chart("engel")];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn usage_and_parse_errors_exit_2() {
    let r = run(&["frobnicate"]);
    assert_eq!(r.code, 2);
    assert_schema("error", &r.json);
    let missing = run(&["validate", "/nonexistent/chart.json"]);
    assert_eq!(missing.code, 2);
    assert_schema("error", &missing.json);
    let bad_point = run(&["osculate", &chart("heisenberg"), "--point", "1,x,0"]);
    assert_eq!(bad_point.code, 2);
}

#[test]
fn quiet_suppresses_logs() {
    let env = [("CARNOTKIT_LOG", "debug")];
    let loud = run_env(&["validate", "/nonexistent/chart.json"], &env);
    assert!(!loud.stderr.is_empty());
    let quiet = run_env(&["--quiet", "validate", "/nonexistent/chart.json"], &env);
    assert!(quiet.stderr.is_empty());
}
