mod common;

use std::path::{Path, PathBuf};

use common::Rig;
use dualfuzz::executor::{CommandToolchain, CommandToolchainConfig, CompileResult, SimAdapterConfig, Toolchain};
use dualfuzz::factory::classify::{classify_failure, FailureCategory};
use dualfuzz::factory::client::{ScriptedClient, TextGenClient};
use dualfuzz::factory::retrieve::retrieve_context;
use dualfuzz::factory::{generate_driver, DriverLanguage, DriverSource, FailureStage, GenerationResult};
use dualfuzz::model::ApiGroup;

use common::GOOD;

const MISSING: &str = "call kv_open path 0\n";
const ARITY: &str = "call kv_open path\ncall kv_close h\n";

fn open_close() -> ApiGroup {
    ApiGroup::new(["kv_open", "kv_close"])
}

#[test]
fn repairs_until_accepted() {
    let rig = Rig::calm();
    let mut client = ScriptedClient::new([MISSING, ARITY, GOOD]);
    let out = generate_driver(&open_close(), "d1", &rig.ctx(), &mut client).unwrap();
    assert_eq!(out.result, GenerationResult::Accepted);
    assert_eq!(out.queries, 3);
    assert_eq!(out.compiled, 1);
    let driver = out.driver.unwrap();
    assert_eq!(driver.generation, 2);
    assert_eq!(driver.text, "call kv_open path 0\ncall kv_close h\n");
    let stages: Vec<FailureStage> = out.failures.iter().map(|f| f.stage).collect();
    assert_eq!(stages, [FailureStage::MissingApi, FailureStage::Compile]);
    assert_eq!(out.failures[1].category, Some(FailureCategory::TypeError));

    let prompts = client.prompts();
    assert!(prompts[0].contains("kv_open") && !prompts[0].contains("### Driver"));
    assert!(prompts[1].contains("### Driver") && prompts[1].contains("never calls: kv_close"));
    assert!(prompts[2].contains("too few arguments to function call, expected 2, have 1"));
    assert!(prompts[2].contains("call kv_open path\n"));
}

#[test]
fn retry_cap_is_four_queries() {
    let rig = Rig::calm();
    let mut client = ScriptedClient::new([ARITY]);
    let out = generate_driver(&open_close(), "d1", &rig.ctx(), &mut client).unwrap();
    assert_eq!(out.result, GenerationResult::ExhaustedRetries);
    assert_eq!(out.queries, 4);
    assert_eq!(client.prompts().len(), 4);
    assert_eq!(out.category, Some(FailureCategory::TypeError));
    assert_eq!(out.failures.len(), 4);
}

#[test]
fn early_crashes_are_rejected_and_counted() {
    let rig = Rig::new(SimAdapterConfig { spurious_early_crash: 1.0, ..Default::default() });
    let mut client = ScriptedClient::new([GOOD]);
    let out = generate_driver(&open_close(), "d1", &rig.ctx(), &mut client).unwrap();
    assert_eq!(out.result, GenerationResult::ExhaustedRetries);
    assert_eq!((out.compiled, out.early_crashes, out.queries), (4, 4, 4));
    assert!(out.failures.iter().all(|f| f.stage == FailureStage::EarlyCrash));
}

#[test]
fn cost_budget_stops_before_overrun() {
    let mut rig = Rig::calm();
    rig.settings.cost_budget = 2.5;
    let mut client = ScriptedClient::new([ARITY]).with_cost(1.0);
    let out = generate_driver(&open_close(), "d1", &rig.ctx(), &mut client).unwrap();
    assert_eq!(out.result, GenerationResult::BudgetExhausted);
    assert_eq!(out.queries, 2);
    assert!(client.accumulated_cost() <= 2.5);

    rig.settings.cost_budget = 0.0;
    let mut free = ScriptedClient::new([GOOD]);
    let out = generate_driver(&open_close(), "d2", &rig.ctx(), &mut free).unwrap();
    assert_eq!((out.result, out.queries), (GenerationResult::BudgetExhausted, 0));
}

fn write(root: &Path, rel: &str, text: &str) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

#[test]
fn retriever_finds_definitions_in_sources() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "include/kvstore.h",
        "#ifndef KVSTORE_H\n#define KVSTORE_H\n#define KV_MAX_KEY 256\n\
         typedef struct KvValue {\n  uint8_t *data;\n  size_t len;\n} KvValue;\n\
         KvHandle *kv_open(const char *path, int flags);\n#endif\n",
    );
    write(
        dir.path(),
        "src/kv.c",
        "#include \"kvstore.h\"\nstruct KvHandle {\n  int fd;\n  size_t count;\n};\n\
         KvHandle *kv_open(const char *path, int flags) {\n  return 0;\n}\n",
    );
    let diag = "driver.c:3:5: error: use of undeclared identifier 'KV_MAX_KEY'\n\
                driver.c:4:9: error: no member named 'size' in 'struct KvValue'\n\
                driver.c:7:1: error: unknown type name 'KvHandle'\n\
                driver.c:9:1: error: no matching function for call to 'kv_open'\n";
    let snippets = retrieve_context(diag, Some(dir.path()), 8);
    let found: Vec<(&str, PathBuf, usize)> =
        snippets.iter().map(|s| (s.identifier.as_str(), s.file.clone(), s.line)).collect();
    assert_eq!(
        found,
        [
            ("KV_MAX_KEY", PathBuf::from("include/kvstore.h"), 3),
            ("KvValue", PathBuf::from("include/kvstore.h"), 4),
            ("KvHandle", PathBuf::from("src/kv.c"), 2),
            ("kv_open", PathBuf::from("src/kv.c"), 6),
        ]
    );
    assert!(snippets[1].text.contains("size_t len;") && snippets[1].text.ends_with("} KvValue;"));
    assert!(snippets[3].text.contains("return 0;"));
    assert!(retrieve_context(diag, None, 8).is_empty());
}

fn have(cmd: &str) -> bool {
    std::process::Command::new("sh")
        .arg("-c")
        .arg(format!("command -v {cmd}"))
        .output()
        .is_ok_and(|o| o.status.success())
}

#[test]
fn clang_diagnostics_classify() {
    if !have("clang") {
        eprintln!("clang not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let tc = CommandToolchain::new(CommandToolchainConfig {
        command: "clang -c {src} -o {out}".into(),
        sanitizer_flags: vec![],
        build_dir: dir.path().to_path_buf(),
    });
    let src = |id: &str, text: &str| DriverSource {
        id: id.into(),
        group: ApiGroup::new(["kv_open"]),
        language: DriverLanguage::C,
        text: text.into(),
        generation: 0,
    };
    let ok = tc.compile(&src("ok", "int f(int x) { return x + 1; }\n")).unwrap();
    assert!(matches!(ok, CompileResult::Binary(ref p) if p.exists()));
    match tc.compile(&src("bad", "int f(void) { return kv_missing_value; }\n")).unwrap() {
        CompileResult::Failed(diag) => {
            assert!(diag.contains("undeclared"), "{diag}");
            assert_eq!(classify_failure(&diag), FailureCategory::NonExistingIdentifier);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(tc.compile(&src("empty", "")).unwrap(), CompileResult::Binary(_) | CompileResult::Failed(_)));
}
