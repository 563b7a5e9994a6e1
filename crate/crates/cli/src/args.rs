use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use innerns::dirichlet::CenterRule;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "innerns", version, about = "Nested sampling with an inner nested sampler for contour volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nested sampling of an expression over a box with rejection proposals.
    Integrate(IntegrateArgs),
    /// Midpoint-grid integral, sorted area curve and pyramid sums.
    OracleGrid(OracleArgs),
    /// Posterior moments of a functional of Dirichlet probabilities.
    Dirichlet(DirichletArgs),
    /// Inner nested sampling estimate of the simplex volume.
    InnerVolume(InnerVolumeArgs),
    /// Evidences and posterior probabilities of competing models.
    EvidenceCompare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Integrate(_) => "integrate",
            Command::OracleGrid(_) => "oracle-grid",
            Command::Dirichlet(_) => "dirichlet",
            Command::InnerVolume(_) => "inner-volume",
            Command::EvidenceCompare(_) => "evidence-compare",
        }
    }
}

/// Output paths are left out of the echoed config so reports written to
/// different places compare equal.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once a sample would add less than 1/F of the evidence.
    #[arg(long)]
    pub termination_factor: Option<f64>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Domain {
    /// Integrand in t1..tD; defaults to a correlated Gaussian on [-5, 5]^2.
    #[arg(long)]
    pub integrand: Option<String>,
    /// Comma-separated lower bounds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    /// Comma-separated upper bounds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct IntegrateArgs {
    #[command(flatten)]
    pub domain: Domain,
    /// Live objects.
    #[arg(long, default_value_t = 100)]
    pub objects: usize,
    /// CSV trace of the run.
    #[arg(long)]
    #[serde(skip)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub domain: Domain,
    /// Cells per axis, one value or one per axis.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub cells: Vec<usize>,
    /// CSV of the sorted area curve.
    #[arg(long)]
    #[serde(skip)]
    pub curve: Option<PathBuf>,
    /// Contour level of the ellipse likelihood for a pyramid sum.
    #[arg(long)]
    pub ellipse_level: Option<f64>,
    /// Sectors of the pyramid sum.
    #[arg(long, default_value_t = 16)]
    pub sectors: usize,
    /// CSV of the sector angles and contour radii.
    #[arg(long)]
    #[serde(skip)]
    pub radii: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn parse_center(s: &str) -> Result<CenterRule, String> {
    match s {
        "paper" => Ok(CenterRule::CountShares),
        "analytic-mode" => Ok(CenterRule::AnalyticMode),
        _ => match s.strip_prefix("custom:") {
            Some(list) => list
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
                .collect::<Result<Vec<_>, _>>()
                .map(CenterRule::Custom),
            None => Err(format!(
                "'{s}' is not one of paper, analytic-mode, custom:<p1,p2,...>"
            )),
        },
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DirichletArgs {
    /// Count table, CSV rows or JSON {"counts": [...], "shape": [I, J]}.
    #[arg(long)]
    pub counts: PathBuf,
    /// Functional of t1..tM whose posterior moments are reported.
    #[arg(long, default_value = "t1")]
    pub functional: String,
    /// Live objects of the outer run.
    #[arg(long, default_value_t = innerns::pipeline::DEFAULT_OBJECTS)]
    pub objects: usize,
    /// Objects of the inner run over directions.
    #[arg(long, default_value_t = innerns::pipeline::DEFAULT_INNER_OBJECTS)]
    pub inner_objects: usize,
    /// Center of the ray geometry: paper (r/n), analytic-mode or custom:p1,p2,...
    #[arg(long, default_value = "paper", value_parser = parse_center)]
    pub center: CenterRule,
    /// Recompute every k-th radius on refresh and interpolate the rest; 0 or 1 recomputes all.
    #[arg(long, default_value_t = 0)]
    pub refresh_every: usize,
    /// CSV trace of the outer run.
    #[arg(long)]
    #[serde(skip)]
    pub trace: Option<PathBuf>,
    /// CSV of the final atlas.
    #[arg(long)]
    #[serde(skip)]
    pub atlas_dump: Option<PathBuf>,
    /// CSV of functional values and their weights.
    #[arg(long)]
    #[serde(skip)]
    pub u_points: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct InnerVolumeArgs {
    /// Number of simplex components M.
    #[arg(long)]
    pub dimension: usize,
    #[arg(long, default_value_t = innerns::pipeline::DEFAULT_INNER_OBJECTS)]
    pub inner_objects: usize,
    /// CSV of the atlas.
    #[arg(long)]
    #[serde(skip)]
    pub atlas_dump: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Model file; repeat for each model.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub objects: usize,
    #[command(flatten)]
    pub common: Common,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_values() {
        assert_eq!(parse_center("paper"), Ok(CenterRule::CountShares));
        assert_eq!(parse_center("analytic-mode"), Ok(CenterRule::AnalyticMode));
        assert_eq!(parse_center("custom:1,2, 3"), Ok(CenterRule::Custom(vec![1.0, 2.0, 3.0])));
        assert!(parse_center("custom:a").is_err());
        assert!(parse_center("middle").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn negative_bounds_parse() {
        let cli = Cli::try_parse_from(["innerns", "integrate", "--lower", "-5,-5", "--upper", "5,5"]).unwrap();
        match cli.command {
            Command::Integrate(a) => assert_eq!(a.domain.lower, Some(vec![-5.0, -5.0])),
            _ => unreachable!(),
        }
    }
}
