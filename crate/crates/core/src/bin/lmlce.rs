use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use lmlce::cli::{
    config_template, emit_csv, emit_plot, execute_run, figure_preset, parse_and_validate, run_preset, CliConfig,
    CliError, WORKERS_ENV,
};

fn configure_pool() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn real_main() -> Result<(), CliError> {
    let cfg = parse_and_validate(std::env::args_os())?;
    configure_pool()?;
    let rt = |e: lmlce::Error| CliError::Runtime(e.to_string());
    let (results, title, out, plot) = match cfg {
        CliConfig::ConfigTemplate => return write_out(None, &config_template()),
        CliConfig::Run(run) => {
            let results = execute_run(&run).map_err(rt)?;
            let title = format!("{} sweep", run.spec.scenario.label());
            (results, title, run.out, run.plot)
        }
        CliConfig::Reproduce { figure, seed, runs, out, plot } => {
            let preset = figure_preset(figure, seed, runs)?;
            let results = run_preset(&preset).map_err(rt)?;
            (results, format!("Figure {figure}: {}", preset.title), out, plot)
        }
    };
    let csv = emit_csv(&results).map_err(rt)?;
    write_out(out.as_deref(), &csv)?;
    if let Some(p) = plot {
        let svg = emit_plot(&csv, &title).map_err(rt)?;
        std::fs::write(&p, svg).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Info(msg) = &e {
                print!("{msg}");
                return ExitCode::SUCCESS;
            }
            eprintln!("lmlce: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
