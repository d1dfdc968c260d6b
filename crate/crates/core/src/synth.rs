//! Synthetic libraries for simulated campaigns and tests.
//!
//! APIs come in modules sharing a context handle: an opener, a closer, a
//! destroyer that must not be combined with the closer, and operations on the
//! handle and a shared buffer type. Leftover APIs become buffer utilities.

use crate::model::{normalize_type, ApiFunction, ImplicitConstraint, LibrarySpec, Parameter};

type Params = &'static [(&'static str, &'static str)];

const OPS: [(&str, &str, Params); 2] = [
    ("read", "int", &[("buf", "Buffer *"), ("len", "size_t")]),
    ("write", "int", &[("buf", "const Buffer *")]),
];

fn api(name: &str, ret: &str, params: &[(&str, &str)]) -> ApiFunction {
    let plist: Vec<String> = params.iter().map(|(n, t)| format!("{t} {n}")).collect();
    ApiFunction {
        name: name.to_string(),
        signature: format!("{ret} {name}({})", plist.join(", ")),
        return_type: normalize_type(ret).expect("static type"),
        parameters: params
            .iter()
            .map(|(n, t)| Parameter { name: n.to_string(), ty: normalize_type(t).expect("static type") })
            .collect(),
    }
}

/// Builds a library with exactly `n_apis` functions.
pub fn synthetic_library(n_apis: usize) -> LibrarySpec {
    let mut apis = Vec::with_capacity(n_apis);
    let mut implicit = Vec::new();
    let per_module = 3 + OPS.len();
    let modules = n_apis / per_module;
    for m in 0..modules {
        let ctx = format!("Ctx{m} *");
        let open = format!("m{m}_open");
        let close = format!("m{m}_close");
        let destroy = format!("m{m}_destroy");
        apis.push(api(&open, &ctx, &[("data", "const uint8_t *"), ("size", "size_t")]));
        apis.push(api(&close, "void", &[("ctx", &ctx)]));
        apis.push(api(&destroy, "void", &[("ctx", &ctx)]));
        for (op, ret, extra) in OPS {
            let mut params = vec![("ctx", ctx.as_str())];
            params.extend_from_slice(extra);
            apis.push(api(&format!("m{m}_{op}"), ret, &params));
        }
        implicit.push(ImplicitConstraint::imply(&open, &close));
        implicit.push(ImplicitConstraint::conflict(&close, &destroy));
    }
    for u in 0..n_apis - modules * per_module {
        apis.push(api(&format!("buf_util{u}"), "size_t", &[("buf", "const Buffer *")]));
    }
    LibrarySpec { library_name: format!("synth{n_apis}"), apis, implicit, source_root: None }
}

/// `n` functions that all take the same handle type and nothing else.
pub fn shared_type_library(n: usize) -> LibrarySpec {
    let apis = (0..n).map(|i| api(&format!("f{i:02}"), "void", &[("h", "Handle *")])).collect();
    LibrarySpec { library_name: format!("shared{n}"), apis, implicit: vec![], source_root: None }
}
