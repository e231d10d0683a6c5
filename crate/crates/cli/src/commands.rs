use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use sai_core::driver::{build_preconditioner, preprocess, solve_irregular_with, solve_standard_with, PrecondStats, SCHEMA_VERSION};
use sai_core::matching::zero_free_diagonal_permutation;
use sai_core::mm::{read_matrix_market_file, read_vector, write_matrix_market, write_matrix_market_file, write_vector};
use sai_core::splitting::{classify, condition_number_1, generate_test_matrix, row_margins, SparsifyStrategy};
use sai_core::{column_stats, split, CscMatrix, Permute, SaiError, SolveReport, SplitOptions};

use crate::args::{
    AnalyzeArgs, BenchArgs, Command, FormatArg, GenerateArgs, MethodKind, ModeArg, PrecondArgs, SolveArgs, SplitArgs,
};
use crate::CliError;

pub fn run(cmd: Command) -> Result<u8, CliError> {
    match cmd {
        Command::Analyze(a) => analyze(a),
        Command::Split(a) => split_cmd(a),
        Command::Precond(a) => precond(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate(a),
    }
}

fn load_matrix(path: &Path) -> Result<CscMatrix, CliError> {
    read_matrix_market_file(path).map_err(|e| CliError::Input(path.display().to_string(), e))
}

fn square(a: &CscMatrix, path: &Path) -> Result<(), CliError> {
    if a.is_square() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: expected a square matrix, got {}x{}", path.display(), a.n_rows(), a.n_cols())))
    }
}

fn load_rhs(source: &str, a: &CscMatrix) -> Result<Vec<f64>, CliError> {
    if source == "ones" {
        return Ok(a.matvec(&vec![1.0; a.n_cols()])?);
    }
    let file = File::open(source).map_err(|e| CliError::Input(source.to_string(), e.into()))?;
    let b = read_vector(BufReader::new(file)).map_err(|e| CliError::Input(source.to_string(), e))?;
    if b.len() != a.n_rows() {
        return Err(CliError::Usage(format!("{source}: right-hand side has {} entries, matrix has {} rows", b.len(), a.n_rows())));
    }
    Ok(b)
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(SaiError::Io(e.to_string())))?;
    write_text(&text, path)
}

fn write_text(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| CliError::Input(p.display().to_string(), e.into())),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Core(e.into())),
                _ => Ok(()),
            }
        }
    }
}

/// SHA-256 of the canonical Matrix Market text of `m`.
pub fn checksum(m: &CscMatrix) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write_matrix_market(m, &mut buf)?;
    Ok(format!("{:x}", Sha256::digest(&buf)))
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Split => "split",
        ModeArg::Standard => "standard",
    }
}

/// The matrix `M` is built for: `PA~` in split mode, `PA` otherwise.
fn precond_target(a: &CscMatrix, permute: Permute, opts: &SplitOptions, mode: ModeArg) -> Result<(CscMatrix, usize, bool), CliError> {
    let (pa, _, permuted) = preprocess(a, &vec![0.0; a.n_rows()], permute)?;
    match mode {
        ModeArg::Standard => Ok((pa, 0, permuted)),
        ModeArg::Split => {
            let sys = split(&pa, opts)?;
            let s = sys.s();
            Ok((sys.a_tilde, s, permuted))
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AnalyzeReport {
    schema_version: u32,
    matrix: String,
    n: usize,
    nnz: usize,
    p: usize,
    p_d: usize,
    s: usize,
    irregular_cols: Vec<usize>,
    factor: f64,
    threshold: f64,
    zero_free_diagonal: bool,
    permuted: bool,
    nnz_tilde: usize,
    norm1: f64,
    norm1_tilde: f64,
    norm_inf: f64,
    norm_inf_tilde: f64,
    strict_row_dd: bool,
    strict_col_dd: bool,
    irreducible: bool,
    irreducibly_dd: bool,
    m_matrix: bool,
    m_matrix_certified: bool,
    min_row_margin: f64,
    min_row_margin_tilde: f64,
    /// 1-norm condition numbers, only for n <= 500.
    cond1: Option<f64>,
    cond1_tilde: Option<f64>,
}

fn analyze(args: AnalyzeArgs) -> Result<u8, CliError> {
    let opts = args.split.options()?;
    let a = load_matrix(&args.matrix)?;
    square(&a, &args.matrix)?;
    let stats = column_stats(&a, opts.factor)?;
    let (pa, _, permuted) = preprocess(&a, &vec![0.0; a.n_rows()], args.split.permute())?;
    let sys = split(&pa, &opts)?;
    let class = classify(&a)?;
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let report = AnalyzeReport {
        schema_version: SCHEMA_VERSION,
        matrix: args.matrix.display().to_string(),
        n: a.n_rows(),
        nnz: a.nnz(),
        p: stats.p,
        p_d: stats.p_d,
        s: stats.s,
        irregular_cols: stats.irregular_cols.clone(),
        factor: stats.factor,
        threshold: stats.threshold,
        zero_free_diagonal: a.has_zero_free_diagonal(),
        permuted,
        nnz_tilde: sys.a_tilde.nnz(),
        norm1: a.norm1(),
        norm1_tilde: sys.a_tilde.norm1(),
        norm_inf: a.norm_inf(),
        norm_inf_tilde: sys.a_tilde.norm_inf(),
        strict_row_dd: class.strict_row_dd,
        strict_col_dd: class.strict_col_dd,
        irreducible: class.irreducible,
        irreducibly_dd: class.irreducibly_dd,
        m_matrix: class.m_matrix,
        m_matrix_certified: class.m_matrix_certified,
        min_row_margin: min(&class.beta),
        min_row_margin_tilde: min(&row_margins(&sys.a_tilde)),
        cond1: condition_number_1(&a),
        cond1_tilde: condition_number_1(&sys.a_tilde),
    };
    emit_json(&report, args.output.as_deref())?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SplitSidecar {
    schema_version: u32,
    source: String,
    n: usize,
    nnz: usize,
    nnz_tilde: usize,
    s: usize,
    irregular_cols: Vec<usize>,
    strategy: SparsifyStrategy,
    p_kept: usize,
    factor: f64,
    /// Row `i` of the split matrix is row `row_permutation[i]` of the input.
    row_permutation: Option<Vec<usize>>,
    a_tilde: String,
    u: String,
}

fn split_cmd(args: SplitArgs) -> Result<u8, CliError> {
    let opts = args.split.options()?;
    let a = load_matrix(&args.matrix)?;
    square(&a, &args.matrix)?;
    let (pa, _, permuted) = preprocess(&a, &vec![0.0; a.n_rows()], args.split.permute())?;
    let row_permutation = if permuted { Some(zero_free_diagonal_permutation(&a)?) } else { None };
    let sys = split(&pa, &opts)?;
    std::fs::create_dir_all(&args.output).map_err(|e| CliError::Input(args.output.display().to_string(), e.into()))?;
    let at_path = args.output.join("a_tilde.mtx");
    let u_path = args.output.join("u.mtx");
    write_matrix_market_file(&sys.a_tilde, &at_path)?;
    write_matrix_market_file(&sys.u, &u_path)?;
    let sidecar = SplitSidecar {
        schema_version: SCHEMA_VERSION,
        source: args.matrix.display().to_string(),
        n: a.n_rows(),
        nnz: a.nnz(),
        nnz_tilde: sys.a_tilde.nnz(),
        s: sys.s(),
        irregular_cols: sys.irregular_cols.clone(),
        strategy: sys.strategy,
        p_kept: sys.p_kept,
        factor: sys.factor,
        row_permutation,
        a_tilde: "a_tilde.mtx".into(),
        u: "u.mtx".into(),
    };
    emit_json(&sidecar, Some(&args.output.join("split.json")))?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PrecondReport {
    schema_version: u32,
    matrix: String,
    mode: &'static str,
    n: usize,
    nnz_target: usize,
    s: usize,
    permuted: bool,
    preconditioner: PrecondStats,
    setup_seconds: f64,
    m_checksum: String,
    output: String,
}

fn precond(args: PrecondArgs) -> Result<u8, CliError> {
    let method = args.method.method()?;
    let opts = args.split.options()?;
    let a = load_matrix(&args.matrix)?;
    square(&a, &args.matrix)?;
    let (target, s, permuted) = precond_target(&a, args.split.permute(), &opts, args.mode)?;
    let t0 = Instant::now();
    let (m, stats) = build_preconditioner(&target, &method)?;
    let setup_seconds = t0.elapsed().as_secs_f64();
    write_matrix_market_file(&m, &args.output)?;
    let report = PrecondReport {
        schema_version: SCHEMA_VERSION,
        matrix: args.matrix.display().to_string(),
        mode: mode_name(args.mode),
        n: a.n_rows(),
        nnz_target: target.nnz(),
        s,
        permuted,
        preconditioner: stats,
        setup_seconds,
        m_checksum: checksum(&m)?,
        output: args.output.display().to_string(),
    };
    emit_json(&report, args.report.as_deref())?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SolveOutput {
    matrix: String,
    m_checksum: String,
    #[serde(flatten)]
    report: SolveReport,
}

fn solve(args: SolveArgs) -> Result<u8, CliError> {
    let method = args.method.method()?;
    let cfg = args.solver.driver_config(method.clone(), &args.split)?;
    let a = load_matrix(&args.matrix)?;
    square(&a, &args.matrix)?;
    let b = load_rhs(&args.solver.rhs, &a)?;

    let (m, built) = match &args.precond_file {
        Some(p) => {
            let m = load_matrix(p)?;
            if m.n_rows() != a.n_rows() || m.n_cols() != a.n_cols() {
                return Err(CliError::Usage(format!(
                    "{}: preconditioner is {}x{}, matrix is {}x{}",
                    p.display(),
                    m.n_rows(),
                    m.n_cols(),
                    a.n_rows(),
                    a.n_cols()
                )));
            }
            (m, None)
        }
        None => {
            let (target, _, _) = precond_target(&a, cfg.permute, &cfg.split, args.mode)?;
            let t0 = Instant::now();
            let (m, stats) = build_preconditioner(&target, &method)?;
            (m, Some((stats, t0.elapsed().as_secs_f64())))
        }
    };

    let mut report = match args.mode {
        ModeArg::Split => solve_irregular_with(&a, &b, &cfg, Some(&m))?,
        ModeArg::Standard => solve_standard_with(&a, &b, &cfg, Some(&m))?,
    };
    if let Some((stats, setup)) = built {
        report.preconditioner = stats;
        report.timings.setup_seconds = setup;
    }
    if let Some(path) = &args.solution {
        let f = File::create(path).map_err(|e| CliError::Input(path.display().to_string(), e.into()))?;
        let mut w = std::io::BufWriter::new(f);
        write_vector(&report.x_hat, &mut w)?;
        w.flush().map_err(|e| CliError::Core(e.into()))?;
    }
    if args.omit_x {
        report.x_hat.clear();
    }
    let a_val = report.a;
    let out = SolveOutput { matrix: args.matrix.display().to_string(), m_checksum: checksum(&m)?, report };
    emit_json(&out, args.output.as_deref())?;
    Ok(if a_val < 1.0 {
        0
    } else if a_val.is_finite() {
        1
    } else {
        3
    })
}

// ---------------------------------------------------------------------------

pub const VARIANTS: [&str; 4] = ["S-SPAI", "N-SPAI", "S-PSAI", "N-PSAI"];
const GUARD_STATUS: &str = "skipped: workspace guard";

#[derive(Debug, Clone, Serialize, Default)]
struct BenchRow {
    variant: String,
    status: String,
    t_setup: Option<f64>,
    t_solve: Option<f64>,
    spar: Option<f64>,
    nnz_m: Option<usize>,
    iter: Option<usize>,
    iter_w_max: Option<usize>,
    a: Option<f64>,
    rr: Option<f64>,
    n_c: Option<usize>,
    l_m: Option<usize>,
    max_candidates: Option<usize>,
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    matrix: String,
    n: usize,
    nnz: usize,
    s: usize,
    timings: &'static str,
    rows: Vec<BenchRow>,
}

fn parse_variant(v: &str) -> Result<(ModeArg, MethodKind), CliError> {
    let mode = match v.get(..2) {
        Some("S-") => ModeArg::Standard,
        Some("N-") => ModeArg::Split,
        _ => return Err(CliError::Usage(format!("unknown variant `{v}`; expected one of {}", VARIANTS.join(", ")))),
    };
    let kind = match &v[2..] {
        "SPAI" => MethodKind::Spai,
        "PSAI" => MethodKind::Psai,
        _ => return Err(CliError::Usage(format!("unknown variant `{v}`; expected one of {}", VARIANTS.join(", ")))),
    };
    Ok((mode, kind))
}

fn bench_row(variant: &str, res: sai_core::Result<SolveReport>) -> BenchRow {
    let blank = |status: String| BenchRow { variant: variant.to_string(), status, ..BenchRow::default() };
    match res {
        Err(SaiError::WorkspaceGuard { .. }) => blank(GUARD_STATUS.into()),
        Err(e) => blank(format!("failed: {e}")),
        Ok(r) if r.preconditioner.guard_hits > 0 => blank(GUARD_STATUS.into()),
        Ok(r) => BenchRow {
            variant: variant.to_string(),
            status: if r.a < 1.0 { "ok".into() } else { "not converged".into() },
            t_setup: Some(r.timings.setup_seconds),
            t_solve: Some(r.timings.solve_seconds),
            spar: Some(r.preconditioner.spar),
            nnz_m: Some(r.preconditioner.nnz_m),
            iter: Some(r.iter_y),
            iter_w_max: r.iter_w.iter().copied().max(),
            a: Some(r.a),
            rr: Some(r.rr),
            n_c: Some(r.preconditioner.n_c),
            l_m: r.preconditioner.l_m,
            max_candidates: r.preconditioner.max_candidates,
        },
    }
}

fn bench(args: BenchArgs) -> Result<u8, CliError> {
    let mut plan = Vec::new();
    for v in &args.variants {
        let (mode, kind) = parse_variant(v.trim())?;
        let cfg = args.solver.driver_config(args.method.method_as(kind)?, &args.split)?;
        plan.push((v.trim().to_string(), mode, cfg));
    }
    let a = load_matrix(&args.matrix)?;
    square(&a, &args.matrix)?;
    let b = load_rhs(&args.solver.rhs, &a)?;
    let s = column_stats(&a, args.split.factor)?.s;

    let rows: Vec<BenchRow> = plan
        .iter()
        .map(|(name, mode, cfg)| {
            let res = match mode {
                ModeArg::Split => solve_irregular_with(&a, &b, cfg, None),
                ModeArg::Standard => solve_standard_with(&a, &b, cfg, None),
            };
            bench_row(name, res)
        })
        .collect();

    match args.format {
        FormatArg::Json => emit_json(
            &BenchReport {
                schema_version: SCHEMA_VERSION,
                matrix: args.matrix.display().to_string(),
                n: a.n_rows(),
                nnz: a.nnz(),
                s,
                timings: "wall-clock seconds, not reproducible",
                rows,
            },
            args.output.as_deref(),
        )?,
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Core(SaiError::Io(e.to_string())))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Core(SaiError::Io(e.to_string())))?;
            write_text(String::from_utf8_lossy(&bytes).trim_end(), args.output.as_deref())?;
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------

fn generate(args: GenerateArgs) -> Result<u8, CliError> {
    let a = generate_test_matrix(args.kind.into(), args.n, args.density, args.planted, args.seed)?;
    let out: PathBuf = args.output;
    write_matrix_market_file(&a, &out)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse() {
        for v in VARIANTS {
            assert!(parse_variant(v).is_ok());
        }
        assert!(parse_variant("X-PSAI").is_err());
        assert!(parse_variant("N-ILU").is_err());
        assert!(parse_variant("N").is_err());
    }

    #[test]
    fn checksum_is_stable() {
        let m = CscMatrix::identity(4);
        assert_eq!(checksum(&m).unwrap(), checksum(&m.clone()).unwrap());
        assert_ne!(checksum(&m).unwrap(), checksum(&CscMatrix::identity(5)).unwrap());
    }

    #[test]
    fn guard_error_becomes_skip_row() {
        let row = bench_row("S-PSAI", Err(SaiError::WorkspaceGuard { column: 0, bytes: 10, limit: 1 }));
        assert_eq!(row.status, GUARD_STATUS);
        assert!(row.a.is_none());
    }
}
