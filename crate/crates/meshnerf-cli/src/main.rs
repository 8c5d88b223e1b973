//! `meshnerf` command-line pipeline.
//!
//! Subcommands mirror the pipeline stages so every intermediate artifact
//! (library, retrieval JSON, checkpoints, renders, metrics) is inspectable:
//!
//! ```text
//! meshnerf build-library --meshes dir/ --out lib/ [--poses 100] ...
//! meshnerf retrieve --library lib/ --images a.png,b.png,c.png [--k 10]
//! meshnerf train --library lib/ --images ... [--masks ...] --out run/
//! meshnerf render --checkpoint run/phase3.ckpt --poses poses.json --out dir/
//! meshnerf eval --checkpoint run/phase3.ckpt --poses heldout.json --images ... --out dir/
//! ```
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 training
//! divergence. Errors print one line: `error[<category>]: <message>`.

use meshnerf::error::Error;
use meshnerf::trainer::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod commands;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            eprintln!("run `meshnerf --help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Pipeline(e)) => {
            let code = match e.category() {
                "divergence" => 4,
                _ => 3,
            };
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(code)
        }
    }
}

pub enum CliError {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Pipeline(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(args: &[String]) -> CliResult<()> {
    let Some(command) = args.first() else {
        print_help();
        return Err(CliError::Usage("missing subcommand".into()));
    };
    if command == "--help" || command == "-h" || command == "help" {
        print_help();
        return Ok(());
    }
    let mut flags = Flags::parse(&args[1..])?;
    if flags.take_bool("help")? {
        print_command_help(command);
        return Ok(());
    }
    if let Some(threads) = flags.take_opt("threads")? {
        let n: usize = threads
            .parse()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match command.as_str() {
        "build-library" => commands::build_library(&mut flags),
        "retrieve" => commands::retrieve(&mut flags),
        "train" => commands::train(&mut flags),
        "render" => commands::render(&mut flags),
        "eval" => commands::eval(&mut flags),
        other => Err(CliError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn print_help() {
    println!("meshnerf: few-view radiance-field reconstruction guided by a mesh template library");
    println!();
    println!("usage: meshnerf <command> [--flag value ...]");
    println!();
    println!("commands:");
    println!("  build-library   render silhouettes of template meshes into a library");
    println!("  retrieve        match input images against a library (JSON on stdout)");
    println!("  train           run retrieval plus the three training phases");
    println!("  render          render novel views from a checkpoint");
    println!("  eval            score rendered views against references");
    println!();
    println!("global flags: --threads N (worker cap), --seed N, --help");
    println!("run `meshnerf <command> --help` for the command's flags");
}

fn print_command_help(command: &str) {
    match command {
        "build-library" => {
            println!("meshnerf build-library --out DIR (--meshes DIR | --starter-shapes)");
            println!("  --meshes DIR          directory of watertight .obj files");
            println!("  --starter-shapes      use the built-in parametric shapes instead");
            println!("  --poses N             sampled poses per model (default 100)");
            println!("  --radius R            camera sphere radius (default 2.0)");
            println!("  --resolution N        silhouette resolution (default 128)");
        }
        "retrieve" => {
            println!("meshnerf retrieve --library DIR (--images A,B,... | --masks A,B,...)");
            println!("  --k N                 candidates per view (default 10)");
            println!("  --max-discard N       views the search may drop, 0..=2 (default 2)");
            println!("  --matte-threshold T   luminance matte cutoff when only images given (default 0.05)");
            println!("  view order = the order files are listed");
        }
        "train" => {
            println!("meshnerf train --library DIR --images A,B,... --out DIR [--masks A,B,...]");
            println!("  --config FILE         key = value lines; flags below override it");
            println!("  --matte-threshold T   luminance matte cutoff when no masks given");
            println!("  config keys (each is also a flag, e.g. --batch_rays 64):");
            for (key, desc) in TrainConfig::keys() {
                println!("  --{key:<19} {desc}");
            }
        }
        "render" => {
            println!("meshnerf render --checkpoint FILE --poses FILE --out DIR");
            println!("  renders one PNG per pose record in the poses.json file");
        }
        "eval" => {
            println!("meshnerf eval --checkpoint FILE --poses FILE --images A,B,... --out DIR");
            println!("  --lpips FILE          per-view LPIPS csv (view,lpips) enabling the average column");
            println!("  --opt-poses FILE      optimized training poses for pose-error reporting");
            println!("  --gt-poses FILE       reference training poses for pose-error reporting");
        }
        other => println!("no help for unknown command {other:?}"),
    }
}

/// Parsed `--key value` flags (booleans may omit the value).
pub struct Flags {
    values: BTreeMap<String, String>,
}

impl Flags {
    fn parse(args: &[String]) -> CliResult<Flags> {
        let mut values = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(key) = arg.strip_prefix("--") else {
                return Err(CliError::Usage(format!("expected --flag, found {arg:?}")));
            };
            let next_is_value = args
                .get(i + 1)
                .is_some_and(|next| !next.starts_with("--"));
            if next_is_value {
                values.insert(key.to_string(), args[i + 1].clone());
                i += 2;
            } else {
                values.insert(key.to_string(), "true".to_string());
                i += 1;
            }
        }
        Ok(Flags { values })
    }

    pub fn take_opt(&mut self, key: &str) -> CliResult<Option<String>> {
        Ok(self.values.remove(key))
    }

    pub fn take(&mut self, key: &str) -> CliResult<String> {
        self.values
            .remove(key)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
    }

    pub fn take_bool(&mut self, key: &str) -> CliResult<bool> {
        match self.values.remove(key) {
            None => Ok(false),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("--{key} expects true/false"))),
        }
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("--{key}: {e}"))),
        }
    }

    pub fn take_path(&mut self, key: &str) -> CliResult<PathBuf> {
        Ok(PathBuf::from(self.take(key)?))
    }

    pub fn take_path_opt(&mut self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.values.remove(key).map(PathBuf::from))
    }

    pub fn take_path_list(&mut self, key: &str) -> CliResult<Vec<PathBuf>> {
        Ok(self
            .take(key)?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect())
    }

    pub fn take_path_list_opt(&mut self, key: &str) -> CliResult<Option<Vec<PathBuf>>> {
        Ok(self.values.remove(key).map(|v| {
            v.split(',')
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect()
        }))
    }

    /// Remaining flags must be config keys; anything else is a usage error.
    pub fn drain_into_config(&mut self, config: &mut TrainConfig) -> CliResult<()> {
        let keys: Vec<String> = self.values.keys().cloned().collect();
        for key in keys {
            let value = self.values.remove(&key).unwrap();
            config
                .set_key(&key, &value)
                .map_err(|_| CliError::Usage(format!("unknown flag --{key}")))?;
        }
        Ok(())
    }

    pub fn reject_unknown(&self) -> CliResult<()> {
        if let Some(key) = self.values.keys().next() {
            return Err(CliError::Usage(format!("unknown flag --{key}")));
        }
        Ok(())
    }
}

pub fn stem_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("view")
        .to_string()
}
