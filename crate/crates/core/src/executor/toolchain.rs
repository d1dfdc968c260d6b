use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::factory::filter::toy_calls;
use crate::factory::{DriverLanguage, DriverSource};
use crate::model::LibrarySpec;

use super::{CompileResult, ExecError, Toolchain};

/// Checks call scripts against the spec and reports problems in the same
/// shape a C compiler would.
pub struct ToyToolchain {
    spec: LibrarySpec,
}

impl ToyToolchain {
    pub fn new(spec: LibrarySpec) -> Self {
        ToyToolchain { spec }
    }
}

impl Toolchain for ToyToolchain {
    fn compile(&self, driver: &DriverSource) -> Result<CompileResult, ExecError> {
        if driver.language != DriverLanguage::Toy {
            return Err(ExecError::Environment(format!(
                "toy toolchain cannot build {:?} driver {}",
                driver.language, driver.id
            )));
        }
        let file = format!("{}.toy", driver.id);
        let mut errors = Vec::new();
        let mut statements = 0;
        let calls = toy_calls(&driver.text);
        for (i, line) in driver.text.lines().enumerate() {
            let code = line.split('#').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            statements += 1;
            let col = line.len() - line.trim_start().len() + 1;
            let Some(call) = calls.iter().find(|c| c.line == i + 1) else {
                errors.push(format!("{file}:{}:{col}: error: expected expression", i + 1));
                continue;
            };
            let name_col = line.find(call.name.as_str()).map_or(col, |p| p + 1);
            let valid_name = call.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':');
            if !valid_name {
                errors.push(format!("{file}:{}:{name_col}: error: expected expression", i + 1));
                continue;
            }
            let Some(api) = self.spec.api(&call.name) else {
                errors.push(format!("{file}:{}:{name_col}: error: use of undeclared identifier '{}'", i + 1, call.name));
                continue;
            };
            let want = api.parameters.len();
            let have = call.args.len();
            if have > want {
                errors.push(format!(
                    "{file}:{}:{name_col}: error: too many arguments to function call, expected {want}, have {have}",
                    i + 1
                ));
            } else if have < want {
                errors.push(format!(
                    "{file}:{}:{name_col}: error: too few arguments to function call, expected {want}, have {have}",
                    i + 1
                ));
            }
        }
        if statements == 0 {
            errors.push(format!("{file}:1:1: error: expected expression"));
        }
        Ok(if errors.is_empty() {
            CompileResult::Binary(PathBuf::from(file))
        } else {
            let n = errors.len();
            errors.push(format!("{n} error{} generated.", if n == 1 { "" } else { "s" }));
            CompileResult::Failed(errors.join("\n"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandToolchainConfig {
    /// Shell command with `{src}` and `{out}` placeholders.
    pub command: String,
    /// Appended verbatim to the command.
    pub sanitizer_flags: Vec<String>,
    pub build_dir: PathBuf,
}

impl Default for CommandToolchainConfig {
    fn default() -> Self {
        CommandToolchainConfig {
            command: "clang -g -fsanitize=fuzzer {src} -o {out}".into(),
            sanitizer_flags: vec!["-fsanitize=address".into()],
            build_dir: PathBuf::from("build"),
        }
    }
}

/// Runs an external compiler through `sh -c`.
pub struct CommandToolchain {
    config: CommandToolchainConfig,
}

impl CommandToolchain {
    pub fn new(config: CommandToolchainConfig) -> Self {
        CommandToolchain { config }
    }
}

impl Toolchain for CommandToolchain {
    fn compile(&self, driver: &DriverSource) -> Result<CompileResult, ExecError> {
        let ext = match driver.language {
            DriverLanguage::C => "c",
            DriverLanguage::Cpp => "cc",
            DriverLanguage::Toy => {
                return Err(ExecError::Environment("command toolchain cannot build call scripts".into()));
            }
        };
        std::fs::create_dir_all(&self.config.build_dir)
            .map_err(|e| ExecError::Environment(format!("{}: {e}", self.config.build_dir.display())))?;
        let src = self.config.build_dir.join(format!("{}.{ext}", driver.id));
        let out = self.config.build_dir.join(&driver.id);
        std::fs::write(&src, &driver.text).map_err(|e| ExecError::Environment(format!("{}: {e}", src.display())))?;
        let mut cmd = self
            .config
            .command
            .replace("{src}", &src.display().to_string())
            .replace("{out}", &out.display().to_string());
        for f in &self.config.sanitizer_flags {
            cmd.push(' ');
            cmd.push_str(f);
        }
        let output = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .output()
            .map_err(|e| ExecError::Environment(format!("cannot run `{cmd}`: {e}")))?;
        if output.status.code() == Some(127) {
            return Err(ExecError::Environment(format!(
                "compiler not found: {}",
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        if output.status.success() {
            return Ok(CompileResult::Binary(out));
        }
        let mut text = String::from_utf8_lossy(&output.stderr).into_owned();
        text.push_str(&String::from_utf8_lossy(&output.stdout));
        if text.trim().is_empty() {
            text = format!("compiler exited with {}", output.status);
        }
        Ok(CompileResult::Failed(text))
    }
}
