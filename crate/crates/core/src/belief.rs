//! The recruiter's per-site Dirichlet-categorical knowledge state:
//! initialization under three prior schemes, posterior sampling, and
//! conjugate updates with observed recruit counts.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::demographics::SiteModel;
use crate::error::{CoreError, Result};

/// Concentration of the symmetric uninformed (Jeffreys) prior.
pub const JEFFREYS_CONCENTRATION: f64 = 0.5;

/// Default pseudo-sample count for the empiric prior.
pub const DEFAULT_EMPIRIC_SAMPLES: u64 = 1000;

/// Default total concentration mass for the informed prior. The posterior
/// mean is mass-invariant, but the variance of posterior draws is not: this
/// mass makes draws from an informed prior about as concentrated as an
/// empiric prior built from the default pre-simulation sample count.
pub const DEFAULT_INFORMED_MASS: f64 = 1000.0;

fn default_empiric_samples() -> u64 {
    DEFAULT_EMPIRIC_SAMPLES
}

fn default_informed_mass() -> f64 {
    DEFAULT_INFORMED_MASS
}

/// How the belief is initialized before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum PriorScheme {
    /// Symmetric Jeffreys prior: every concentration 0.5.
    Uninformed,
    /// Jeffreys base plus counts of pre-simulation draws from each site's
    /// true response distribution.
    Empiric {
        #[serde(default = "default_empiric_samples", rename = "samples-per-site")]
        samples_per_site: u64,
    },
    /// Each site's actual response distribution, scaled to total mass.
    Informed {
        #[serde(default = "default_informed_mass")]
        mass: f64,
    },
}

impl Default for PriorScheme {
    fn default() -> Self {
        PriorScheme::Informed {
            mass: DEFAULT_INFORMED_MASS,
        }
    }
}

/// Per-site Dirichlet concentration vectors; the bandit's knowledge state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletBelief {
    concentrations: Vec<Vec<f64>>,
}

impl DirichletBelief {
    /// Uninformed (Jeffreys) prior: every concentration 0.5.
    pub fn jeffreys(n_sites: usize, n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(CoreError::InvalidParameter(format!(
                "belief needs at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self {
            concentrations: vec![vec![JEFFREYS_CONCENTRATION; n_cells]; n_sites],
        })
    }

    /// Fully informed prior: concentrations proportional to each site's true
    /// response distribution, scaled to total `mass`.
    pub fn informed(sites: &[SiteModel], mass: f64) -> Result<Self> {
        if !mass.is_finite() || mass <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "informed prior mass must be positive, got {mass}"
            )));
        }
        let concentrations = sites
            .iter()
            .map(|s| {
                s.response
                    .probs()
                    .iter()
                    // clamp away exact zeros: a Dirichlet parameter must be positive
                    .map(|&p| (mass * p).max(f64::MIN_POSITIVE))
                    .collect()
            })
            .collect();
        Ok(Self { concentrations })
    }

    /// Empiric prior: Jeffreys base plus counts of `samples_per_site`
    /// categorical draws from each site's true response distribution.
    /// A zero sample count degenerates to the Jeffreys prior.
    pub fn empiric<R: Rng + ?Sized>(
        sites: &[SiteModel],
        samples_per_site: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let n_cells = sites.first().map_or(0, |s| s.response.len());
        let mut belief = Self::jeffreys(sites.len(), n_cells)?;
        for (j, site) in sites.iter().enumerate() {
            let counts = crate::simulator::recruit_batch(site.response.probs(), samples_per_site, rng);
            belief.update_with_counts(j, &counts)?;
        }
        Ok(belief)
    }

    /// Builds a belief for `scheme`, drawing any pre-simulation samples from
    /// `rng`.
    pub fn from_scheme<R: Rng + ?Sized>(
        scheme: PriorScheme,
        sites: &[SiteModel],
        rng: &mut R,
    ) -> Result<Self> {
        let n_cells = sites.first().map_or(0, |s| s.response.len());
        match scheme {
            PriorScheme::Uninformed => Self::jeffreys(sites.len(), n_cells),
            PriorScheme::Empiric { samples_per_site } => {
                Self::empiric(sites, samples_per_site, rng)
            }
            PriorScheme::Informed { mass } => Self::informed(sites, mass),
        }
    }

    pub fn site_count(&self) -> usize {
        self.concentrations.len()
    }

    pub fn cell_count(&self) -> usize {
        self.concentrations.first().map_or(0, Vec::len)
    }

    pub fn concentration(&self, site: usize) -> &[f64] {
        &self.concentrations[site]
    }

    pub fn total_concentration(&self, site: usize) -> f64 {
        self.concentrations[site].iter().sum()
    }

    /// Posterior mean of a site's response distribution.
    pub fn posterior_mean(&self, site: usize) -> Vec<f64> {
        let total = self.total_concentration(site);
        self.concentrations[site].iter().map(|a| a / total).collect()
    }

    /// One draw from the site's Dirichlet posterior, via normalized
    /// independent Gamma(α, 1) draws. Deterministic under a fixed generator
    /// state.
    pub fn sample_estimate<R: Rng + ?Sized>(&self, site: usize, rng: &mut R) -> Vec<f64> {
        let alpha = &self.concentrations[site];
        let mut draw: Vec<f64> = alpha
            .iter()
            .map(|&a| {
                Gamma::new(a, 1.0)
                    .expect("concentrations are strictly positive")
                    .sample(rng)
            })
            .collect();
        let sum: f64 = draw.iter().sum();
        if sum > 0.0 {
            for x in &mut draw {
                *x /= sum;
            }
        } else {
            // all gamma draws underflowed to zero; fall back to the mean
            draw = self.posterior_mean(site);
        }
        draw
    }

    /// Conjugate update: adds observed recruit counts to one site's
    /// concentrations. Other sites are untouched.
    pub fn update_with_counts(&mut self, site: usize, counts: &[u64]) -> Result<()> {
        let alpha = self
            .concentrations
            .get_mut(site)
            .ok_or_else(|| CoreError::InvalidParameter(format!("no site {site}")))?;
        if counts.len() != alpha.len() {
            return Err(CoreError::DimensionMismatch {
                expected: alpha.len(),
                got: counts.len(),
                context: "belief update counts".into(),
            });
        }
        for (a, &c) in alpha.iter_mut().zip(counts) {
            *a += c as f64;
        }
        Ok(())
    }
}
