//! Published reference figures for the fraud task with three clients.
//! They come from a different protocol stack and hardware, so they are
//! carried as annotations only and never compared against.

use hvfl_core::nn::Variant;

use crate::config::Method;

pub const PUBLISHED_LABEL: &str = "published, different protocol stack";

/// s/batch (mean, 95% half-width) per profile, bytes and rounds per 64-batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedRow {
    pub method: Method,
    pub variant: Option<Variant>,
    pub lan_s: (f64, f64),
    /// `None` where the run did not finish.
    pub wan_s: Option<(f64, f64)>,
    pub comm_mb: Option<f64>,
    pub rounds: Option<u64>,
}

const fn row(v: Variant, lan: (f64, f64), wan: (f64, f64), mb: f64, rounds: u64) -> PublishedRow {
    let method = if matches!(v, Variant::H1 | Variant::H2 | Variant::H3 | Variant::H4) { Method::Pphh } else { Method::VflMpc };
    PublishedRow { method, variant: Some(v), lan_s: lan, wan_s: Some(wan), comm_mb: Some(mb), rounds: Some(rounds) }
}

// Measured runtimes; 3.14 is a timing, not an approximation of pi.
#[allow(clippy::approx_constant)]
pub const PUBLISHED: [PublishedRow; 9] = [
    PublishedRow { method: Method::E2e, variant: None, lan_s: (13880.06, 2.84), wan_s: None, comm_mb: None, rounds: None },
    row(Variant::P1, (0.45, 0.01), (3.17, 0.03), 6.42, 32),
    row(Variant::P2, (0.54, 0.02), (3.13, 0.01), 29.63, 32),
    row(Variant::P3, (1.84, 0.02), (14.86, 0.01), 181.42, 32),
    row(Variant::P4, (15.05, 0.02), (139.44, 0.01), 1732.31, 32),
    row(Variant::H1, (0.54, 0.01), (3.10, 0.02), 2.31, 33),
    row(Variant::H2, (0.54, 0.01), (3.13, 0.02), 4.44, 33),
    row(Variant::H3, (0.55, 0.00), (3.09, 0.02), 8.97, 33),
    row(Variant::H4, (0.64, 0.01), (3.14, 0.02), 19.00, 33),
];

/// Annotation for a report row, or an empty string when nothing matches.
pub fn published_note(method: Method, variant: Variant, profile: &str) -> String {
    let want = (method != Method::E2e).then_some(variant);
    let Some(r) = PUBLISHED.iter().find(|r| r.method == method && r.variant == want) else {
        return String::new();
    };
    let s = match profile.to_ascii_uppercase().as_str() {
        "LAN" => Some(r.lan_s),
        "WAN" => r.wan_s,
        _ => return String::new(),
    };
    let mut parts = vec![match s {
        Some((m, ci)) => format!("{m:.2}+-{ci:.2} s/batch"),
        None => "did not finish".to_string(),
    }];
    if let Some(mb) = r.comm_mb {
        parts.push(format!("{mb:.2} MB"));
    }
    if let Some(k) = r.rounds {
        parts.push(format!("{k} rounds"));
    }
    format!("{} ({PUBLISHED_LABEL})", parts.join(", "))
}
