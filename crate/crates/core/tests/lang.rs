mod common;

use std::collections::BTreeMap;

use common::plans::{random_plan, SOURCE};
use common::*;
use lakekit::contracts::{parse_manifest, validate_data, SchemaContract};
use lakekit::lang::{evaluate, infer_schema, parse_expr, parse_transform, Expr, Transform};
use lakekit::{BaseType, BranchClass, ColumnType, Error, Ref, TableSnapshot, Value, MAIN};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn schemas(list: &[(&str, SchemaContract)]) -> BTreeMap<String, SchemaContract> {
    list.iter().map(|(n, s)| (n.to_string(), s.clone())).collect()
}

fn child_schema() -> SchemaContract {
    SchemaContract::of(
        "ChildSchema",
        &[
            ("col2", ColumnType::required(BaseType::Timestamp)),
            ("col4", ColumnType::required(BaseType::Float64)),
            ("col5", ColumnType::nullable(BaseType::String)),
        ],
    )
}

fn grand_schema() -> SchemaContract {
    SchemaContract::of(
        "Grand",
        &[
            ("col2", ColumnType::required(BaseType::Timestamp)),
            ("col4", ColumnType::required(BaseType::Int64)),
        ],
    )
}

fn types_of(t: &Transform, inputs: &BTreeMap<String, SchemaContract>) -> Vec<(String, ColumnType)> {
    infer_schema(t, inputs)
        .unwrap()
        .columns
        .into_iter()
        .map(|c| (c.name, c.ty))
        .collect()
}

fn named(cols: &[(&str, ColumnType)]) -> Vec<(String, ColumnType)> {
    cols.iter().map(|(n, t)| (n.to_string(), *t)).collect()
}

#[test]
fn parses_the_aggregate_example() {
    let t = parse_transform("select col1, col2, sum(col3) as _S from raw_table group by col1, col2").unwrap();
    let expected =
        Transform::table("raw_table").aggregate(&["col1", "col2"], vec![Expr::col("col3").sum().alias("_S")]);
    assert_eq!(t, expected);
}

#[test]
fn parses_joins_filters_and_casts() {
    let t = parse_transform(
        "select col2, cast(col4 as int64) as col4 from child_table \
         join (select col2 from grand_child) on col2 where col5 is not null",
    )
    .unwrap();
    let expected = Transform::table("child_table")
        .join(
            Transform::table("grand_child").select(vec![Expr::col("col2")]),
            &["col2"],
        )
        .filter(Expr::col("col5").is_not_null())
        .select(vec![Expr::col("col4")
            .cast(ColumnType::required(BaseType::Int64))
            .alias("col4")]);
    // the projection also keeps col2 first
    let Transform::Select { input, mut items } = expected else {
        unreachable!()
    };
    items.insert(0, Expr::col("col2"));
    assert_eq!(t, Transform::Select { input, items });
}

#[test]
fn incomplete_input_is_a_syntax_error() {
    for src in [
        "select",
        "select a from",
        "select a b from t",
        "select sum(a), b from t",
    ] {
        let err = parse_transform(src).unwrap_err();
        assert_eq!(err.code(), "SyntaxError", "{src}");
        assert!(matches!(err, Error::Syntax { line: 1, .. }), "{src}: {err}");
    }
    match parse_transform("select a\nfrom").unwrap_err() {
        Error::Syntax { line, col, .. } => assert_eq!((line, col), (2, 5)),
        other => panic!("{other}"),
    }
}

#[test]
fn grand_child_narrows_col4() {
    let t = parse_transform("select col2, cast(col4 as int64) as col4 from child_table").unwrap();
    let inputs = schemas(&[("child_table", child_schema())]);
    assert_eq!(
        types_of(&t, &inputs),
        named(&[
            ("col2", ColumnType::required(BaseType::Timestamp)),
            ("col4", ColumnType::required(BaseType::Int64)),
        ])
    );
    let bare = parse_transform("select col2 from child_table").unwrap();
    assert_eq!(
        types_of(&bare, &inputs),
        named(&[("col2", ColumnType::required(BaseType::Timestamp))])
    );
}

#[test]
fn family_friend_proves_col5_non_null() {
    let t = parse_transform(
        "select col2, col4, col5 from child_table \
         join (select col2, col4 as g4 from grand_child) on col2 \
         where col5 is not null and g4 - col4 < 0.5",
    )
    .unwrap();
    let inputs = schemas(&[("child_table", child_schema()), ("grand_child", grand_schema())]);
    assert_eq!(
        types_of(&t, &inputs),
        named(&[
            ("col2", ColumnType::required(BaseType::Timestamp)),
            ("col4", ColumnType::required(BaseType::Float64)),
            ("col5", ColumnType::required(BaseType::String)),
        ])
    );
}

#[test]
fn inference_errors() {
    let inputs = schemas(&[("child_table", child_schema())]);
    let infer = |src: &str| infer_schema(&parse_transform(src).unwrap(), &inputs).unwrap_err();
    match infer("select nope from child_table") {
        Error::UnknownColumn { name, available } => {
            assert_eq!(name, "nope");
            assert_eq!(available, ["col2", "col4", "col5"]);
        }
        other => panic!("{other}"),
    }
    assert_eq!(infer("select col2 - col4 as d from child_table").code(), "TypeMismatch");
    assert_eq!(infer("select col2 from child_table where col4").code(), "TypeMismatch");
    assert_eq!(infer("select sum(col5) as s from child_table").code(), "TypeMismatch");
}

#[test]
fn sums_keep_their_input_type() {
    let s = SchemaContract::of(
        "S",
        &[
            ("k", ColumnType::required(BaseType::String)),
            ("i", ColumnType::required(BaseType::Int64)),
            ("f", ColumnType::nullable(BaseType::Float64)),
        ],
    );
    let t = parse_transform("select k, sum(i) as si, sum(f) as sf from s group by k").unwrap();
    let out = types_of(&t, &schemas(&[("s", s)]));
    assert_eq!(out[1].1.base, BaseType::Int64);
    assert_eq!(out[2].1.base, BaseType::Float64);
}

fn table(cols: &[(&str, ColumnType)], rows: Vec<Vec<Value>>) -> TableSnapshot {
    TableSnapshot::from_rows(SchemaContract::of("T", cols), rows).unwrap()
}

fn run(src: &str, inputs: &[(&str, &TableSnapshot)]) -> lakekit::Result<TableSnapshot> {
    let inputs = inputs.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect();
    evaluate(&parse_transform(src).unwrap(), &inputs)
}

#[test]
fn sums_group_and_sort_by_key() {
    let t = table(
        &[
            ("k", ColumnType::required(BaseType::String)),
            ("v", ColumnType::required(BaseType::Int64)),
        ],
        vec![
            vec![Value::Str("b".into()), Value::Int(5)],
            vec![Value::Str("a".into()), Value::Int(1)],
            vec![Value::Str("a".into()), Value::Int(2)],
        ],
    );
    let out = run("select k, sum(v) as s from t group by k", &[("t", &t)]).unwrap();
    let rows: Vec<_> = out.rows().collect();
    assert_eq!(
        rows,
        [
            vec![Value::Str("a".into()), Value::Int(3)],
            vec![Value::Str("b".into()), Value::Int(5)],
        ]
    );
}

#[test]
fn not_null_filter_drops_nulls() {
    let t = table(
        &[("v", ColumnType::nullable(BaseType::String))],
        vec![
            vec![Value::Str("x".into())],
            vec![Value::Null],
            vec![Value::Str("y".into())],
        ],
    );
    let out = run("select v from t where v is not null", &[("t", &t)]).unwrap();
    assert_eq!(
        out.column("v").unwrap(),
        [Value::Str("x".into()), Value::Str("y".into())]
    );
    assert!(!out.schema().column("v").unwrap().ty.nullable);
}

#[test]
fn float_to_int_casts_truncate() {
    let values = [1.9, 0.2, -1.9, -0.5, 7.0, 2.5];
    let t = table(
        &[("col4", ColumnType::required(BaseType::Float64))],
        values.iter().map(|x| vec![Value::Float(*x)]).collect(),
    );
    let out = run("select cast(col4 as int64) as col4 from t", &[("t", &t)]).unwrap();
    // truncation toward zero, recomputed through the integer part
    let expected: Vec<Value> = values.iter().map(|x| Value::Int(x.trunc() as i64)).collect();
    assert_eq!(out.column("col4").unwrap(), expected);
    assert_eq!(&out.column("col4").unwrap()[..2], [Value::Int(1), Value::Int(0)]);
}

#[test]
fn runtime_cast_errors() {
    let t = table(
        &[("v", ColumnType::nullable(BaseType::Float64))],
        vec![vec![Value::Float(1.0)], vec![Value::Null]],
    );
    let err = run("select cast(v as int64) as v from t", &[("t", &t)]).unwrap_err();
    assert_eq!(err.code(), "RuntimeCastNull");
    let s = table(
        &[("v", ColumnType::required(BaseType::String))],
        vec![vec![Value::Str("not a time".into())]],
    );
    let err = run("select cast(v as timestamp) as v from s", &[("s", &s)]).unwrap_err();
    assert_eq!(err.code(), "CastFailed");
}

#[test]
fn sums_fail_on_overflow() {
    let t = table(
        &[("v", ColumnType::required(BaseType::Int64))],
        vec![vec![Value::Int(i64::MAX)], vec![Value::Int(1)]],
    );
    let err = run("select sum(v) as s from t", &[("t", &t)]).unwrap_err();
    assert_eq!(err.code(), "ArithmeticOverflow");
}

#[test]
fn missing_inputs_are_reported() {
    let t = table(
        &[("v", ColumnType::required(BaseType::Float64))],
        vec![vec![Value::Float(1.0)]],
    );
    let inputs: BTreeMap<_, _> = [("t".to_string(), t)].into();
    assert!(evaluate(&parse_transform("select v from t").unwrap(), &inputs).is_ok());
    assert!(evaluate(&Transform::table("missing"), &inputs).is_err());
}

/// Node transforms from generated plans, inferred and evaluated in order.
/// Every successful evaluation must conform to the inferred contract, and
/// evaluating twice must store the same snapshot.
#[test]
fn evaluation_conforms_to_inference() {
    let (_d, repo) = fresh_repo();
    repo.create_branch("again", &Ref::branch(MAIN), BranchClass::Normal)
        .unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let (mut evaluated, mut non_null_checked) = (0, 0);
    for i in 0..400 {
        let p = random_plan(&mut rng, 4);
        let plan = parse_manifest(&p.manifest, "gen.lk").unwrap();
        let mut schemas: BTreeMap<String, SchemaContract> = [(SOURCE.to_string(), p.source.schema().clone())].into();
        let mut data: BTreeMap<String, TableSnapshot> = [(SOURCE.to_string(), p.source.clone())].into();
        for node in &plan.nodes {
            let Ok(inferred) = infer_schema(&node.transform, &schemas) else {
                break;
            };
            let contract = inferred.to_contract(&node.name).unwrap();
            let out = match evaluate(&node.transform, &data) {
                Ok(out) => out,
                Err(e) => {
                    assert!(
                        matches!(e.code(), "CastFailed" | "RuntimeCastNull" | "ArithmeticOverflow"),
                        "plan {i} node {}: {e}\n{}",
                        node.name,
                        p.manifest
                    );
                    break;
                }
            };
            let report = validate_data(&out, &contract);
            assert!(
                report.is_conformant(),
                "plan {i} node {}: {}",
                node.name,
                report.summary()
            );
            non_null_checked += contract.columns.iter().filter(|c| !c.ty.nullable).count() * out.row_count();
            evaluated += 1;

            let twice = evaluate(&node.transform, &data).unwrap();
            let a = write_and_id(&repo, MAIN, &out);
            let b = write_and_id(&repo, "again", &twice);
            assert_eq!(a, b, "plan {i} node {}", node.name);

            schemas.insert(node.name.clone(), contract);
            data.insert(node.name.clone(), out);
        }
    }
    assert!(evaluated > 400, "only {evaluated} nodes evaluated");
    assert!(non_null_checked > 1000);
}

fn write_and_id(repo: &lakekit::Repo, branch: &str, t: &TableSnapshot) -> lakekit::SnapshotId {
    let head = repo.branch(branch).unwrap().head;
    repo.write_table(branch, "t", t, &head).unwrap();
    repo.snapshot_id(&Ref::branch(branch), "t").unwrap()
}

// ---------------------------------------------------------------- round trip

fn arb_name() -> impl Strategy<Value = std::string::String> {
    prop_oneof![
        8 => "[a-z_][a-z0-9_]{0,5}",
        1 => Just("select".to_string()),
        1 => Just("4_grand".to_string()),
        1 => Just("a b".to_string()),
        1 => Just("q\"uote".to_string()),
    ]
}

fn arb_type() -> impl Strategy<Value = ColumnType> {
    (
        prop::sample::select(vec![
            BaseType::String,
            BaseType::Int64,
            BaseType::Float64,
            BaseType::Timestamp,
            BaseType::Bool,
        ]),
        any::<bool>(),
    )
        .prop_map(|(b, n)| ColumnType::new(b, n))
}

fn arb_literal() -> impl Strategy<Value = Expr> {
    let value = prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        (-1000i64..1000).prop_map(Value::Int),
        (-400i32..400).prop_map(|x| Value::Float(x as f64 / 8.0)),
        "[a-z' ]{0,6}".prop_map(Value::Str),
        (0i64..2_000_000_000).prop_map(|s| Value::Timestamp(s * 1_000_000)),
    ];
    prop_oneof![
        4 => value.clone().prop_map(Expr::lit),
        1 => value.prop_map(|v| {
            let ty = ColumnType::nullable(v.base_type().unwrap());
            Expr::Lit(v, ty)
        }),
        1 => arb_type().prop_map(|t| Expr::Lit(Value::Null, t.with_nullable(true))),
    ]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![arb_name().prop_map(Expr::Col), arb_literal()];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), arb_type()).prop_map(|(e, t)| e.cast(t)),
            inner.clone().prop_map(Expr::is_not_null),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.lt(b)),
            (inner.clone(), inner).prop_map(|(a, b)| a.and(b)),
        ]
    })
}

fn arb_item() -> impl Strategy<Value = Expr> {
    prop_oneof![arb_expr(), (arb_expr(), arb_name()).prop_map(|(e, n)| e.alias(n))]
}

fn arb_agg() -> impl Strategy<Value = Expr> {
    prop_oneof![
        arb_expr().prop_map(Expr::sum),
        (arb_expr(), arb_name()).prop_map(|(e, n)| e.sum().alias(n)),
    ]
}

fn arb_transform() -> impl Strategy<Value = Transform> {
    let leaf = arb_name().prop_map(Transform::Table);
    leaf.prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::collection::vec(arb_item(), 1..4)).prop_map(|(t, items)| t.select(items)),
            (inner.clone(), arb_expr()).prop_map(|(t, p)| t.filter(p)),
            (inner.clone(), inner.clone(), prop::collection::vec(arb_name(), 1..3)).prop_map(|(l, r, on)| {
                Transform::Join {
                    left: Box::new(l),
                    right: Box::new(r),
                    on,
                }
            }),
            (
                inner,
                prop::collection::vec(arb_name(), 0..3),
                prop::collection::vec(arb_agg(), 1..3)
            )
                .prop_map(|(t, group_by, aggs)| Transform::Aggregate {
                    input: Box::new(t),
                    group_by,
                    aggs,
                }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn printing_then_parsing_is_identity(t in arb_transform()) {
        let text = t.to_string();
        let back = parse_transform(&text);
        prop_assert!(back.is_ok(), "{text}: {:?}", back.err());
        prop_assert_eq!(back.unwrap(), t, "{}", text);
    }

    #[test]
    fn expressions_round_trip(e in arb_expr()) {
        let text = e.to_string();
        prop_assert_eq!(parse_expr(&text).unwrap(), e, "{}", text);
    }
}
