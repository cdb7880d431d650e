//! `--link` resolution: a built-in name, or a JSON file naming a built-in
//! family with optional starting values for θ.
//!
//! ```json
//! { "family": "exponential", "theta_start": [[2.5, 0.5]] }
//! ```

use std::path::Path;

use rdream_core::{LinkGradient, LinkSpec};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    family: String,
    #[serde(default)]
    theta_start: Vec<Vec<f64>>,
}

pub fn resolve_link(arg: &str) -> CliResult<LinkSpec> {
    if let Ok(link) = LinkSpec::by_name(arg) {
        return Ok(link);
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "--link '{arg}' is neither a built-in link (linear, exponential) nor a readable file"
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
        path: arg.to_string(),
        message: e.to_string(),
    })?;
    let spec: LinkFile = serde_json::from_str(&text).map_err(|e| CliError::Read {
        path: arg.to_string(),
        message: e.to_string(),
    })?;
    let base = LinkSpec::by_name(&spec.family)?;
    if spec.theta_start.is_empty() {
        return Ok(base);
    }
    // same link, user-chosen starting grid
    let probe = base.clone();
    let grad_link = base.clone();
    let absorb = base.absorbs_scale().then(|| {
        let b = base.clone();
        std::sync::Arc::new(move |t: &[f64], s: f64| {
            b.absorb_scale(t, s).unwrap_or_else(|| t.to_vec())
        }) as rdream_core::data::ScaleAbsorbFn
    });
    Ok(LinkSpec::user(
        base.name(),
        base.theta_dim(),
        std::sync::Arc::new(move |u, t| probe.eval(u, t)),
        LinkGradient::Analytic(std::sync::Arc::new(move |u, t| {
            grad_link
                .gradient(u, t)
                .expect("built-in links have gradients")
        })),
        spec.theta_start,
        absorb,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn builtin_names() {
        assert_eq!(resolve_link("linear").unwrap().name(), "linear");
        assert_eq!(resolve_link("exp").unwrap().theta_dim(), 2);
        assert!(matches!(resolve_link("cubic"), Err(CliError::Usage(m)) if m.contains("cubic")));
    }

    #[test]
    fn file_with_starts() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"family": "exponential", "theta_start": [[2.5, 0.5]]}"#)
            .unwrap();
        let link = resolve_link(f.path().to_str().unwrap()).unwrap();
        assert_eq!(link.theta_grid(), &[vec![2.5, 0.5]]);
        assert!((link.eval(1.0, &[2.0, 1.0]) - 2.0 * 1f64.exp()).abs() < 1e-15);
        assert!(link.absorbs_scale());
    }

    #[test]
    fn file_with_wrong_length_start() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"family": "exponential", "theta_start": [[1.0]]}"#)
            .unwrap();
        assert!(resolve_link(f.path().to_str().unwrap()).is_err());
    }
}
