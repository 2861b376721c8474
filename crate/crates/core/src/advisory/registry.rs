use std::collections::BTreeMap;

use super::{
    AdvisoryError, ConstantSpeed, EquilibriumHeuristic, LinearPolicy, MlpPolicy, Policy, PolicyContext, PolicyKind,
};

pub type PolicyFactory = fn(&PolicyKind, &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError>;
type TemplateFn = fn(&PolicyContext) -> PolicyKind;

struct Entry {
    build: PolicyFactory,
    template: TemplateFn,
}

/// Policies by name. `builtin()` registers every implementation shipped
/// here; callers can add their own.
pub struct PolicyRegistry {
    entries: BTreeMap<&'static str, Entry>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(ConstantSpeed::NAME, build_constant, |ctx| PolicyKind::ConstantSpeed {
            speed_mps: crate::ring::equilibrium_speed(&ctx.idm, &ctx.ring).unwrap_or(0.0),
        });
        r.register(EquilibriumHeuristic::NAME, build_heuristic, |_| PolicyKind::EquilibriumHeuristic {
            margin_mps: EquilibriumHeuristic::DEFAULT_MARGIN_MPS,
        });
        r.register(LinearPolicy::NAME, build_linear, |ctx| PolicyKind::Linear {
            weights: vec![0.0; LinearPolicy::N_PARAMS],
            normalization: Some(ctx.default_normalization()),
        });
        r.register(MlpPolicy::NAME, build_mlp, |ctx| PolicyKind::Mlp {
            layers: vec![4, 8, 1],
            weights: vec![0.0; MlpPolicy::param_count(&[4, 8, 1])],
            normalization: Some(ctx.default_normalization()),
        });
        r
    }

    pub fn register(&mut self, name: &'static str, build: PolicyFactory, template: TemplateFn) {
        self.entries.insert(name, Entry { build, template });
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, kind: &PolicyKind, ctx: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
        let entry = self
            .entries
            .get(kind.name())
            .ok_or_else(|| AdvisoryError::UnknownPolicy(kind.name().to_string()))?;
        (entry.build)(kind, ctx)
    }

    /// Default-initialized description for `name`, used as a training
    /// starting point or when a policy is picked by name alone.
    pub fn template(&self, name: &str, ctx: &PolicyContext) -> Result<PolicyKind, AdvisoryError> {
        self.entries
            .get(name)
            .map(|e| (e.template)(ctx))
            .ok_or_else(|| AdvisoryError::UnknownPolicy(name.to_string()))
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn build_constant(kind: &PolicyKind, ctx: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
    match kind {
        PolicyKind::ConstantSpeed { speed_mps } => Ok(Box::new(ConstantSpeed::with_context(*speed_mps, ctx))),
        other => Err(AdvisoryError::UnknownPolicy(other.name().into())),
    }
}

fn build_heuristic(kind: &PolicyKind, ctx: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
    match kind {
        PolicyKind::EquilibriumHeuristic { margin_mps } => Ok(Box::new(EquilibriumHeuristic::new(*margin_mps, ctx)?)),
        other => Err(AdvisoryError::UnknownPolicy(other.name().into())),
    }
}

fn build_linear(kind: &PolicyKind, ctx: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
    match kind {
        PolicyKind::Linear { weights, normalization } => Ok(Box::new(LinearPolicy::new(
            weights,
            normalization.unwrap_or_else(|| ctx.default_normalization()),
        )?)),
        other => Err(AdvisoryError::UnknownPolicy(other.name().into())),
    }
}

fn build_mlp(kind: &PolicyKind, ctx: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
    match kind {
        PolicyKind::Mlp { layers, weights, normalization } => Ok(Box::new(MlpPolicy::new(
            layers.clone(),
            weights.clone(),
            normalization.unwrap_or_else(|| ctx.default_normalization()),
        )?)),
        other => Err(AdvisoryError::UnknownPolicy(other.name().into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::ActionMode;
    use crate::ring::{IdmParams, RingConfig};

    fn ctx() -> PolicyContext {
        PolicyContext::new(RingConfig::default(), IdmParams::default(), ActionMode::Speed)
    }

    #[test]
    fn every_builtin_template_builds() {
        let reg = PolicyRegistry::builtin();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["constant_speed", "equilibrium_heuristic", "linear", "mlp"]);
        for name in names {
            let kind = reg.template(name, &ctx()).unwrap();
            let policy = reg.build(&kind, &ctx()).unwrap();
            assert_eq!(policy.name(), name);
            assert_eq!(policy.kind().name(), name);
        }
    }

    #[test]
    fn unknown_names_rejected() {
        let reg = PolicyRegistry::builtin();
        assert!(matches!(reg.template("trpo", &ctx()), Err(AdvisoryError::UnknownPolicy(_))));
        let empty = PolicyRegistry::empty();
        assert!(empty.build(&PolicyKind::ConstantSpeed { speed_mps: 1.0 }, &ctx()).is_err());
    }

    #[test]
    fn custom_registration_overrides() {
        fn fixed(_: &PolicyKind, _: &PolicyContext) -> Result<Box<dyn Policy>, AdvisoryError> {
            Ok(Box::new(ConstantSpeed::new(1.25)))
        }
        let mut reg = PolicyRegistry::builtin();
        reg.register("constant_speed", fixed, |_| PolicyKind::ConstantSpeed { speed_mps: 0.0 });
        let p = reg.build(&PolicyKind::ConstantSpeed { speed_mps: 9.0 }, &ctx()).unwrap();
        assert_eq!(p.params(), vec![1.25]);
    }
}
