//! Witness reports: a JSON document carrying the judgment, its hypothesis,
//! the concrete evidence, and the sources needed to re-check it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guards::{Assignment, Scope, Sort, Var};
use crate::infer::{Budgets, Stats, Success};
use crate::lang::{self, ApiTable, Program, SpecDecl};
use crate::oracle::{Evidence, OracleConfig};
use crate::sre::{self, Sre, Trace};
use crate::typing::{CoverageType, Judgment, TripleType, TypingContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub program: String,
    pub spec: String,
    pub hypothesis: HypothesisReport,
    pub context: Vec<EntryReport>,
    pub abduced: Vec<String>,
    pub judgment: JudgmentReport,
    pub evidence: Option<EvidenceReport>,
    pub budgets: BudgetReport,
    pub stats: StatsReport,
    pub sources: Sources,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub index: usize,
    pub pivot: usize,
    pub prefix: String,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryReport {
    pub var: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub ghost: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentReport {
    pub context_sre: String,
    pub result: String,
    pub effect_sre: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub assignment: BTreeMap<String, u32>,
    pub prefix: String,
    pub produced: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub domain: u32,
    pub max_prefix: usize,
    pub max_hypotheses: usize,
    pub max_branches: usize,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub hypotheses_tried: usize,
    pub branches: usize,
    pub infer_us: u64,
    pub validate_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sources {
    pub program: String,
    pub spec: String,
    pub apis: String,
}

/// Everything a report describes, re-parsed and resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub apis: ApiTable,
    pub program: Program,
    pub spec: SpecDecl,
    pub judgment: Judgment,
    pub prefix: Sre,
    pub suffix: Sre,
    pub evidence: Option<Evidence>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Invalid(format!("report: {}", msg.into()))
}

impl WitnessReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        program: &Program,
        spec: &SpecDecl,
        sources: Sources,
        success: &Success,
        evidence: Option<&Evidence>,
        budgets: &Budgets,
        cfg: &OracleConfig,
        stats: &Stats,
        validate_us: u64,
    ) -> Self {
        let j = &success.judgment;
        let h = &success.hypothesis;
        WitnessReport {
            program: program.name.clone(),
            spec: spec.name.clone(),
            hypothesis: HypothesisReport {
                index: h.index,
                pivot: h.split.pivot,
                prefix: h.prefix.to_string(),
                suffix: h.suffix.to_string(),
            },
            context: j
                .ctx
                .entries()
                .iter()
                .map(|e| EntryReport {
                    var: e.var.name().to_string(),
                    ty: e.ty.to_string(),
                    ghost: e.ghost,
                })
                .collect(),
            abduced: success.abduced.iter().map(ToString::to_string).collect(),
            judgment: JudgmentReport {
                context_sre: j.ty.context.to_string(),
                result: j.ty.result.to_string(),
                effect_sre: j.ty.effect.to_string(),
            },
            evidence: evidence.map(|ev| EvidenceReport {
                assignment: ev
                    .assignment
                    .iter()
                    .map(|(v, a)| (v.name().to_string(), *a))
                    .collect(),
                prefix: ev.prefix.to_string(),
                produced: ev.produced.to_string(),
            }),
            budgets: BudgetReport {
                domain: cfg.domain_size,
                max_prefix: cfg.max_prefix_len,
                max_hypotheses: budgets.max_hypotheses,
                max_branches: budgets.max_branches,
                timeout_ms: budgets.timeout.as_millis() as u64,
            },
            stats: StatsReport {
                hypotheses_tried: stats.hypotheses_tried,
                branches: stats.branches,
                infer_us: stats.elapsed.as_micros() as u64,
                validate_us,
            },
            sources,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    /// Re-parses the embedded sources and every printed regex and type.
    pub fn load(&self) -> Result<Loaded> {
        let apis = lang::parse_apis(&self.sources.apis)?;
        let program = lang::parse_program(&self.sources.program, &apis)?;
        let spec = lang::parse_spec(&self.sources.spec, &apis)?;
        let alphabet = apis.alphabet();

        let spec_vars = spec.var_list();
        let spec_scope = Scope::new(alphabet, &spec_vars);
        let prefix = sre::parse_sre(&self.hypothesis.prefix, &spec_scope)?;
        let suffix = sre::parse_sre(&self.hypothesis.suffix, &spec_scope)?;

        let mut ctx = TypingContext::new();
        let mut vars: Vec<Var> = Vec::new();
        for e in &self.context {
            let ty = CoverageType::parse(&e.ty, &Scope::new(alphabet, &vars))?;
            let v = Var::new(&e.var, ty.base);
            ctx.push(v.clone(), ty, e.ghost)?;
            vars.push(v);
        }
        let scope = Scope::new(alphabet, &vars);
        let judgment = Judgment {
            ctx,
            subject: program.name.clone(),
            ty: TripleType {
                context: sre::parse_sre(&self.judgment.context_sre, &scope)?,
                result: CoverageType::parse(&self.judgment.result, &scope)?,
                effect: sre::parse_sre(&self.judgment.effect_sre, &scope)?,
            },
        };
        let evidence = match &self.evidence {
            None => None,
            Some(ev) => {
                let mut assignment = Assignment::new();
                for (name, value) in &ev.assignment {
                    let v = vars
                        .iter()
                        .find(|v| v.name() == name)
                        .cloned()
                        .unwrap_or_else(|| Var::new(name, Sort::Addr));
                    assignment.insert(v, *value);
                }
                Some(Evidence {
                    assignment,
                    prefix: Trace::parse(&ev.prefix, alphabet)?,
                    produced: Trace::parse(&ev.produced, alphabet)?,
                })
            }
        };
        if program.name != self.program || spec.name != self.spec {
            return Err(bad("names do not match the embedded sources"));
        }
        Ok(Loaded {
            apis,
            program,
            spec,
            judgment,
            prefix,
            suffix,
            evidence,
        })
    }
}
