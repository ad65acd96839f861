//! Wires perception, planning and abstraction backends from a
//! [`GlobalConfig`] into one engine shared by the CLI and the C API.

use std::sync::Arc;

use crate::abstraction::{Canonicalizer, Lexicon, LexiconCanonicalizer, LlmCanonicalizer};
use crate::config::{AbstractionBackendId, ConfigError, GlobalConfig, PerceptionBackendId, PlannerBackendId};
use crate::error::Result;
use crate::library::{DemoPolicy, DataManifest, GapReport, SkillLibrary};
use crate::perception::{build_scene_graph, FixturePerception, HttpPerception, PerceptionBackend, PerceptionRequest};
use crate::planner::{label_hints, HttpLlm, MockRuleTable, Planner, PlannerBackend, PromptTemplate, TaskInstruction, TaskPlan};
use crate::scene::SceneGraph;

pub struct Engine {
    config: GlobalConfig,
    lexicon: Arc<Lexicon>,
    canonicalizer: Arc<dyn Canonicalizer>,
    perception: Box<dyn PerceptionBackend>,
    planner: Planner,
}

impl Engine {
    pub fn new(config: GlobalConfig) -> Result<Self> {
        config.validate()?;
        let lexicon = Arc::new(match &config.lexicon_path {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        });
        let lex_canon = LexiconCanonicalizer::new(lexicon.clone());
        let canonicalizer: Arc<dyn Canonicalizer> = match config.abstraction_backend {
            AbstractionBackendId::Lexicon => Arc::new(lex_canon.clone()),
            AbstractionBackendId::Http => {
                Arc::new(LlmCanonicalizer::new(config.backends.abstraction.clone().unwrap_or_default(), lexicon.clone())?)
            }
        };
        let perception: Box<dyn PerceptionBackend> = match config.perception_backend {
            PerceptionBackendId::Fixture => {
                GlobalConfig::require_dir("fixtures directory", &config.fixtures_dir)?;
                Box::new(FixturePerception::new(config.scenes_dir()))
            }
            PerceptionBackendId::Http => Box::new(HttpPerception::new(config.backends.perception.clone().unwrap_or_default())?),
        };
        let backend: Box<dyn PlannerBackend> = match config.planner_backend {
            PlannerBackendId::Mock => {
                let rules = config.rules_path();
                if rules.is_file() {
                    Box::new(MockRuleTable::load(&rules, lex_canon)?)
                } else {
                    Box::new(MockRuleTable::builtin(lex_canon))
                }
            }
            PlannerBackendId::Http => Box::new(HttpLlm::new(config.backends.planner.clone().unwrap_or_default())?),
        };
        let template_path = config.template_path();
        let template = if template_path.is_file() {
            PromptTemplate::load(&template_path)?
        } else if config.templates_dir.is_dir() {
            PromptTemplate::builtin()
        } else {
            return Err(ConfigError::MissingPath {
                what: "templates directory",
                path: config.templates_dir.display().to_string(),
            }
            .into());
        };
        let planner =
            Planner::new(backend, template, canonicalizer.clone()).with_replan_each_step(config.replan_each_step);
        Ok(Self { config, lexicon, canonicalizer, perception, planner })
    }

    pub fn config(&self) -> &GlobalConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn canonicalizer(&self) -> &dyn Canonicalizer {
        self.canonicalizer.as_ref()
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    /// Scene graph restricted to objects named in `instruction` when any
    /// are; otherwise the whole scene.
    pub fn scene_for(&self, scene_id: &str, instruction: &str) -> Result<SceneGraph> {
        let req = PerceptionRequest::scene(scene_id);
        let hinted = req.clone().with_hints(label_hints(instruction, self.canonicalizer.as_ref()));
        let graph = build_scene_graph(self.perception.as_ref(), &hinted)?;
        if graph.objects.is_empty() {
            return Ok(build_scene_graph(self.perception.as_ref(), &req)?);
        }
        Ok(graph)
    }

    pub fn plan(&self, instruction: &str, scene_id: &str, task_id: Option<&str>) -> Result<TaskPlan> {
        let task = match task_id {
            Some(id) => TaskInstruction::new(id, instruction),
            None => TaskInstruction::from_text(instruction),
        };
        if task.text.trim().is_empty() {
            return Err(crate::planner::PlannerError::EmptyInstruction.into());
        }
        let scene = self.scene_for(scene_id, instruction)?;
        Ok(self.planner.decompose(&task, &scene)?)
    }

    pub fn gap_report(&self, lib: &SkillLibrary, plan: &TaskPlan) -> Result<GapReport> {
        Ok(lib.gap_report(plan, self.config.granularity, &self.lexicon)?)
    }

    pub fn update_cycle(&self, lib: &mut SkillLibrary, plan: &TaskPlan, policy: &DemoPolicy) -> Result<DataManifest> {
        Ok(lib.update_cycle(plan, self.config.granularity, policy, &self.lexicon)?)
    }
}
