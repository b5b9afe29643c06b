use super::config::{
    Check, ExperimentConfig, InitialState, MetricName, OracleSpec, PlantSource, UtilitySpec, Variant, VerifyOptions,
    CONFIG_VERSION,
};
use super::thermal::{thermal_plant_spec, OUTDOOR_TEMPERATURE};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::plant::PlantSpec;
use crate::preference::{LinkFunction, PmvEnvironment};

pub const BUILTIN_NAMES: [&str; 4] = ["quadratic-c01", "quadratic-c07", "quadratic-algebraic", "thermal"];

/// Horizon of the quadratic studies.
pub const QUADRATIC_HORIZON: usize = 4000;

fn quadratic(name: &str, c: f64, variant: Variant, description: &str) -> ExperimentConfig {
    let spec = PlantSpec {
        id: Some(format!("quadratic-c{:02}", (c * 10.0).round() as i64)),
        description: Some(format!("A = [[{c}, 1], [0, {c}]], B = I")),
        a: vec![vec![c, 1.0], vec![0.0, c]],
        b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        q: None,
    };
    let mut metrics = vec![MetricName::RelativeError, MetricName::DistToOptSquared, MetricName::Utility];
    if variant == Variant::ClosedLoop {
        metrics.push(MetricName::Lyapunov);
    }
    let verify = if variant == Variant::ClosedLoop {
        Check::ALL.to_vec()
    } else {
        vec![Check::Lemma2, Check::Lemma3, Check::Lemma5]
    };
    ExperimentConfig {
        version: CONFIG_VERSION,
        name: name.into(),
        description: Some(description.into()),
        plant: PlantSource::Inline(spec),
        utility: UtilitySpec::Quadratic {
            x_ref: vec![100.0, 100.0],
        },
        oracle: OracleSpec {
            links: vec![LinkFunction::Logistic],
            seed: 0,
        },
        controller: ControllerConfig {
            eta: 0.1,
            delta: 0.5,
            horizon: QUADRATIC_HORIZON,
            u0: vec![0.0, 0.0],
        },
        x0: InitialState::SteadyState,
        variant,
        replicas: 20,
        metrics,
        verify,
        verify_options: VerifyOptions::default(),
        safety_box: None,
        output: None,
    }
}

fn thermal() -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        version: CONFIG_VERSION,
        name: "thermal".into(),
        description: Some("13-state RC building surrogate, heating power input, PPD comfort utility".into()),
        plant: PlantSource::Inline(thermal_plant_spec()?),
        utility: UtilitySpec::PpdComfort {
            state_index: 0,
            temperature_offset: OUTDOOR_TEMPERATURE,
            env: PmvEnvironment::default(),
        },
        oracle: OracleSpec {
            links: vec![LinkFunction::Logistic, LinkFunction::Sign],
            seed: 0,
        },
        controller: ControllerConfig {
            eta: 0.05,
            delta: 0.25,
            horizon: 1500,
            u0: vec![13.0],
        },
        x0: InitialState::SteadyState,
        variant: Variant::ClosedLoop,
        replicas: 20,
        metrics: vec![
            MetricName::ComfortTemperature,
            MetricName::Utility,
            MetricName::DistToOptSquared,
            MetricName::Lyapunov,
        ],
        verify: vec![Check::Lemma1],
        verify_options: VerifyOptions::default(),
        safety_box: None,
        output: None,
    })
}

/// The four shipped studies.
pub fn builtin_configs() -> Vec<ExperimentConfig> {
    vec![
        quadratic("quadratic-c01", 0.1, Variant::ClosedLoop, "quadratic tracking, c = 0.1"),
        quadratic("quadratic-c07", 0.7, Variant::ClosedLoop, "quadratic tracking, c = 0.7"),
        quadratic(
            "quadratic-algebraic",
            0.1,
            Variant::Algebraic,
            "quadratic tracking, c = 0.1, comparisons at steady state (no transients)",
        ),
        thermal().expect("shipped thermal data parses"),
    ]
}

/// Looks up a builtin, suggesting the closest names on a miss.
pub fn builtin(name: &str) -> Result<ExperimentConfig> {
    if let Some(c) = builtin_configs().into_iter().find(|c| c.name == name) {
        return Ok(c);
    }
    let mut ranked: Vec<(usize, &str)> = BUILTIN_NAMES.iter().map(|n| (edit_distance(name, n), *n)).collect();
    ranked.sort();
    let available = ranked.iter().map(|(_, n)| *n).collect::<Vec<_>>().join(", ");
    Err(Error::UnknownBuiltin {
        name: name.to_string(),
        available,
    })
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(ca != *cb));
            diag = up;
        }
    }
    row[b.len()]
}
