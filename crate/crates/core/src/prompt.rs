//! Few-shot prompt construction.
//!
//! A prompt is `header ⊕ d_1 ⊕ sep ⊕ … ⊕ d_k ⊕ sep ⊕ f_x(query) ⊕ query_suffix`
//! where each demonstration `d_i` is the input pattern filled with the
//! example text followed by the output pattern filled with the class
//! verbalizer. Templates are plain data: the built-in set ships as JSON and
//! user templates load from files with the same schema.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INPUT_PLACEHOLDER: &str = "{input}";
pub const PREMISE_PLACEHOLDER: &str = "{premise}";
pub const HYPOTHESIS_PLACEHOLDER: &str = "{hypothesis}";
pub const LABEL_PLACEHOLDER: &str = "{label}";

pub const DEFAULT_CONTENT_FREE_TOKEN: &str = "N/A";
pub const DEFAULT_DEMO_SEPARATOR: &str = "\n\n";

/// Tolerance on `Σ proportions = 1`.
const PROPORTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("template expects {expected} input but example is {found}")]
    InputShape {
        expected: &'static str,
        found: &'static str,
    },
    #[error("cannot sample: {0}")]
    Sampling(String),
    #[error("cannot sample {needed} demonstrations of class {class}: only {available} available")]
    QuotaUnrealizable {
        class: usize,
        needed: usize,
        available: usize,
    },
}

/// One class of a [`LabelSpace`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDescriptor {
    pub index: usize,
    pub display_name: String,
    pub verbalizer: String,
}

/// Ordered classes and the verbalizer each one is rendered as.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassDescriptor>", into = "Vec<ClassDescriptor>")]
pub struct LabelSpace {
    classes: Vec<ClassDescriptor>,
}

impl LabelSpace {
    /// Build from verbalizers; display names default to the verbalizers.
    pub fn new(verbalizers: &[impl AsRef<str>]) -> Result<Self, PromptError> {
        let names: Vec<&str> = verbalizers.iter().map(AsRef::as_ref).collect();
        Self::with_names(&names, &names)
    }

    pub fn with_names(
        display_names: &[impl AsRef<str>],
        verbalizers: &[impl AsRef<str>],
    ) -> Result<Self, PromptError> {
        if display_names.len() != verbalizers.len() {
            return Err(PromptError::LabelSpace(format!(
                "{} display names for {} verbalizers",
                display_names.len(),
                verbalizers.len()
            )));
        }
        let classes: Vec<ClassDescriptor> = display_names
            .iter()
            .zip(verbalizers)
            .enumerate()
            .map(|(index, (name, verb))| ClassDescriptor {
                index,
                display_name: name.as_ref().to_owned(),
                verbalizer: verb.as_ref().to_owned(),
            })
            .collect();
        Self::try_from(classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassDescriptor] {
        &self.classes
    }

    pub fn verbalizer(&self, class: usize) -> Result<&str, PromptError> {
        self.check(class)?;
        Ok(&self.classes[class].verbalizer)
    }

    pub fn verbalizers(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.verbalizer.as_str())
    }

    pub fn check(&self, class: usize) -> Result<(), PromptError> {
        if class < self.classes.len() {
            Ok(())
        } else {
            Err(PromptError::InvalidLabel {
                label: class,
                classes: self.classes.len(),
            })
        }
    }
}

impl TryFrom<Vec<ClassDescriptor>> for LabelSpace {
    type Error = PromptError;

    fn try_from(classes: Vec<ClassDescriptor>) -> Result<Self, Self::Error> {
        if classes.len() < 2 {
            return Err(PromptError::LabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, class) in classes.iter().enumerate() {
            if class.index != i {
                return Err(PromptError::LabelSpace(format!(
                    "class indices must be 0..C-1 in order, found {} at position {i}",
                    class.index
                )));
            }
            if class.verbalizer.is_empty() {
                return Err(PromptError::LabelSpace(format!("class {i} has an empty verbalizer")));
            }
            if let Some(prev) = seen.insert(class.verbalizer.as_str(), i) {
                return Err(PromptError::LabelSpace(format!(
                    "classes {prev} and {i} share verbalizer {:?}",
                    class.verbalizer
                )));
            }
        }
        Ok(Self { classes })
    }
}

impl From<LabelSpace> for Vec<ClassDescriptor> {
    fn from(ls: LabelSpace) -> Self {
        ls.classes
    }
}

/// Raw task input: a single text or a premise/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Input {
    Pair { premise: String, hypothesis: String },
    Text(String),
}

impl Input {
    pub fn text(s: impl Into<String>) -> Self {
        Input::Text(s.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            Input::Text(_) => "single-text",
            Input::Pair { .. } => "pair",
        }
    }

    /// Canonical string identity of the input.
    pub fn key(&self) -> String {
        match self {
            Input::Text(t) => t.clone(),
            Input::Pair {
                premise,
                hypothesis,
            } => format!("{premise}\u{1f}{hypothesis}"),
        }
    }
}

impl From<&str> for Input {
    fn from(s: &str) -> Self {
        Input::Text(s.to_owned())
    }
}

/// A labeled example, either placed in a prompt as a demonstration or held
/// as a dataset row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: Input,
    pub label: usize,
}

impl Demonstration {
    pub fn new(input: impl Into<Input>, label: usize) -> Self {
        Self {
            input: input.into(),
            label,
        }
    }
}

impl From<String> for Input {
    fn from(s: String) -> Self {
        Input::Text(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputShape {
    Single,
    Pair,
}

/// Declarative prompt format. This is also the on-disk template schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    #[serde(default)]
    pub header: String,
    pub input_pattern: String,
    pub output_pattern: String,
    #[serde(default = "default_separator")]
    pub demo_separator: String,
    pub query_suffix: String,
    pub verbalizers: Vec<String>,
}

fn default_separator() -> String {
    DEFAULT_DEMO_SEPARATOR.to_owned()
}

fn builtins() -> &'static BTreeMap<String, PromptTemplate> {
    static BUILTINS: OnceLock<BTreeMap<String, PromptTemplate>> = OnceLock::new();
    BUILTINS.get_or_init(|| {
        serde_json::from_str(include_str!("templates.json")).expect("built-in templates parse")
    })
}

/// Names of the six SST-2 formats used for template-robustness studies.
pub const SST2_FORMATS: [&str; 6] = [
    "sst2-format1",
    "sst2-format2",
    "sst2-format3",
    "sst2-format4",
    "sst2-format5",
    "sst2-format6",
];

impl PromptTemplate {
    pub fn builtin(name: &str) -> Option<PromptTemplate> {
        builtins().get(name).cloned()
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        builtins().keys().map(String::as_str)
    }

    /// Tabular template with verbalizers `"0".."C-1"`.
    pub fn tabular(classes: usize) -> PromptTemplate {
        let mut t = Self::builtin("openml").expect("openml template is built in");
        t.verbalizers = (0..classes).map(|c| c.to_string()).collect();
        t
    }

    /// Resolve a built-in name, falling back to a JSON file path.
    pub fn resolve(name_or_path: &str) -> Result<PromptTemplate, PromptError> {
        if let Some(t) = Self::builtin(name_or_path) {
            return Ok(t);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| {
            PromptError::Template(format!(
                "{name_or_path:?} is neither a built-in template nor a readable file: {e}"
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<PromptTemplate, PromptError> {
        let t: PromptTemplate =
            serde_json::from_str(text).map_err(|e| PromptError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        self.input_shape()?;
        let labels = self.output_pattern.matches(LABEL_PLACEHOLDER).count();
        if labels != 1 {
            return Err(PromptError::Template(format!(
                "output_pattern must contain exactly one {LABEL_PLACEHOLDER}, found {labels}"
            )));
        }
        self.label_space()?;
        Ok(())
    }

    fn input_shape(&self) -> Result<InputShape, PromptError> {
        let count = |p: &str| self.input_pattern.matches(p).count();
        match (
            count(INPUT_PLACEHOLDER),
            count(PREMISE_PLACEHOLDER),
            count(HYPOTHESIS_PLACEHOLDER),
        ) {
            (1, 0, 0) => Ok(InputShape::Single),
            (0, 1, 1) => Ok(InputShape::Pair),
            (i, p, h) => Err(PromptError::Template(format!(
                "input_pattern must contain exactly one {INPUT_PLACEHOLDER} or one each of \
                 {PREMISE_PLACEHOLDER}/{HYPOTHESIS_PLACEHOLDER}; found {i}/{p}/{h}"
            ))),
        }
    }

    pub fn label_space(&self) -> Result<LabelSpace, PromptError> {
        LabelSpace::new(&self.verbalizers)
    }

    /// `f_x`: the input pattern filled with the raw input.
    pub fn render_input(&self, input: &Input) -> Result<String, PromptError> {
        let shape = self.input_shape()?;
        match (shape, input) {
            (InputShape::Single, Input::Text(text)) => {
                Ok(fill(&self.input_pattern, &[(INPUT_PLACEHOLDER, text)]))
            }
            (
                InputShape::Pair,
                Input::Pair {
                    premise,
                    hypothesis,
                },
            ) => Ok(fill(
                &self.input_pattern,
                &[
                    (PREMISE_PLACEHOLDER, premise),
                    (HYPOTHESIS_PLACEHOLDER, hypothesis),
                ],
            )),
            (InputShape::Single, other) => Err(PromptError::InputShape {
                expected: "single-text",
                found: other.kind(),
            }),
            (InputShape::Pair, other) => Err(PromptError::InputShape {
                expected: "pair",
                found: other.kind(),
            }),
        }
    }

    /// `f_y`: the output pattern filled with a verbalizer.
    pub fn render_output(&self, verbalizer: &str) -> String {
        fill(&self.output_pattern, &[(LABEL_PLACEHOLDER, verbalizer)])
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
fn fill(pattern: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(pattern.len() + 64);
    let mut rest = pattern;
    'outer: while !rest.is_empty() {
        if rest.starts_with('{') {
            for (name, value) in slots {
                if let Some(tail) = rest.strip_prefix(name) {
                    out.push_str(value);
                    rest = tail;
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Format a feature row as `x1=v1, x2=v2, …` for the tabular template.
pub fn tabular_input<T: std::fmt::Display>(features: &[T]) -> Input {
    let text = features
        .iter()
        .enumerate()
        .map(|(i, v)| format!("x{}={v}", i + 1))
        .collect::<Vec<_>>()
        .join(", ");
    Input::Text(text)
}

/// Where a prompt's demonstrations came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub rendered_text: String,
    pub demo_count: usize,
    pub query_input: Input,
    #[serde(default)]
    pub provenance: Provenance,
}

pub fn render_demonstration(
    demo: &Demonstration,
    template: &PromptTemplate,
    labels: &LabelSpace,
) -> Result<String, PromptError> {
    let verbalizer = labels.verbalizer(demo.label)?;
    let mut text = template.render_input(&demo.input)?;
    text.push_str(&template.render_output(verbalizer));
    Ok(text)
}

pub fn assemble_prompt(
    query: &Input,
    demos: &[Demonstration],
    template: &PromptTemplate,
    labels: &LabelSpace,
) -> Result<Prompt, PromptError> {
    let mut text = template.header.clone();
    for demo in demos {
        text.push_str(&render_demonstration(demo, template, labels)?);
        text.push_str(&template.demo_separator);
    }
    text.push_str(&template.render_input(query)?);
    text.push_str(&template.query_suffix);
    Ok(Prompt {
        rendered_text: text,
        demo_count: demos.len(),
        query_input: query.clone(),
        provenance: Provenance::default(),
    })
}

/// Validation prompts: each labeled validation input as the query, all
/// sharing the same demonstrations. Output order follows `val_set`.
pub fn build_validation_prompts(
    val_set: &[Demonstration],
    demos: &[Demonstration],
    template: &PromptTemplate,
    labels: &LabelSpace,
) -> Result<Vec<(Prompt, usize)>, PromptError> {
    val_set
        .iter()
        .map(|v| {
            labels.check(v.label)?;
            Ok((assemble_prompt(&v.input, demos, template, labels)?, v.label))
        })
        .collect()
}

pub fn content_free_prompt(
    demos: &[Demonstration],
    template: &PromptTemplate,
    labels: &LabelSpace,
    cf_token: &str,
) -> Result<Prompt, PromptError> {
    let query = match template.input_shape()? {
        InputShape::Single => Input::text(cf_token),
        InputShape::Pair => Input::Pair {
            premise: cf_token.to_owned(),
            hypothesis: cf_token.to_owned(),
        },
    };
    let mut prompt = assemble_prompt(&query, demos, template, labels)?;
    prompt.provenance.note = "content-free".to_owned();
    Ok(prompt)
}

/// Per-class counts for `k` draws under `proportions`, rounded with the
/// largest-remainder rule (ties go to the lower class index).
pub fn proportion_quotas(k: usize, proportions: &[f64]) -> Result<Vec<usize>, PromptError> {
    if proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(PromptError::Sampling(format!(
            "proportions must be non-negative, got {proportions:?}"
        )));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > PROPORTION_TOLERANCE {
        return Err(PromptError::Sampling(format!(
            "proportions sum to {total}, expected 1"
        )));
    }
    let exact: Vec<f64> = proportions.iter().map(|p| p * k as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().take(k.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    Ok(counts)
}

/// Draw `k` demonstrations from `dataset`. Deterministic in `seed`.
///
/// Without `proportions` the draw is uniform without replacement and labels
/// are not balanced. With `proportions` (one fraction per class) each class
/// contributes its largest-remainder quota; the result is shuffled either way.
pub fn sample_demonstrations(
    dataset: &[Demonstration],
    k: usize,
    seed: u64,
    proportions: Option<&[f64]>,
) -> Result<Vec<Demonstration>, PromptError> {
    if k > dataset.len() {
        return Err(PromptError::Sampling(format!(
            "k = {k} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Demonstration> = match proportions {
        None => rand::seq::index::sample(&mut rng, dataset.len(), k)
            .into_iter()
            .map(|i| dataset[i].clone())
            .collect(),
        Some(fractions) => {
            if let Some(bad) = dataset.iter().find(|d| d.label >= fractions.len()) {
                return Err(PromptError::InvalidLabel {
                    label: bad.label,
                    classes: fractions.len(),
                });
            }
            let quotas = proportion_quotas(k, fractions)?;
            let mut out = Vec::with_capacity(k);
            for (class, &need) in quotas.iter().enumerate() {
                let pool: Vec<&Demonstration> =
                    dataset.iter().filter(|d| d.label == class).collect();
                if pool.len() < need {
                    return Err(PromptError::QuotaUnrealizable {
                        class,
                        needed: need,
                        available: pool.len(),
                    });
                }
                out.extend(
                    rand::seq::index::sample(&mut rng, pool.len(), need)
                        .into_iter()
                        .map(|i| pool[i].clone()),
                );
            }
            out
        }
    };
    picked.shuffle(&mut rng);
    Ok(picked)
}

pub fn permute_demonstrations(demos: &[Demonstration], seed: u64) -> Vec<Demonstration> {
    let mut out = demos.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub estimate: usize,
    pub fits: bool,
}

/// Rough sequence-length check: `ceil(chars / 4)` unless the backend
/// reported an exact count.
pub fn estimate_token_budget(
    prompt: &Prompt,
    max_tokens: usize,
    reported: Option<usize>,
) -> TokenBudget {
    let estimate = reported.unwrap_or_else(|| prompt.rendered_text.chars().count().div_ceil(4));
    TokenBudget {
        estimate,
        fits: estimate <= max_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sst2() -> (PromptTemplate, LabelSpace) {
        let t = PromptTemplate::builtin("sst2").unwrap();
        let ls = t.label_space().unwrap();
        (t, ls)
    }

    fn minimal() -> PromptTemplate {
        PromptTemplate {
            header: "H\n".into(),
            input_pattern: "X: {input}\n".into(),
            output_pattern: "Y: {label}".into(),
            demo_separator: "\n\n".into(),
            query_suffix: "Y:".into(),
            verbalizers: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn renders_sst2_demonstration() {
        let (t, ls) = sst2();
        let d = Demonstration::new("Perhaps the best sports movie I have ever seen.", 0);
        assert_eq!(
            render_demonstration(&d, &t, &ls).unwrap(),
            "Review: Perhaps the best sports movie I have ever seen.\nSentiment: Positive"
        );
    }

    #[test]
    fn renders_empty_input() {
        let mut t = minimal();
        t.header.clear();
        let ls = t.label_space().unwrap();
        let d = Demonstration::new("", 0);
        assert_eq!(render_demonstration(&d, &t, &ls).unwrap(), "X: \nY: a");
    }

    #[test]
    fn renders_tabular_row() {
        let t = PromptTemplate::tabular(2);
        let ls = t.label_space().unwrap();
        let d = Demonstration {
            input: tabular_input(&["r.x1", "r.x2"]),
            label: 1,
        };
        assert_eq!(
            render_demonstration(&d, &t, &ls).unwrap(),
            "When we have x1=r.x1, x2=r.x2, what should be y? ### y=1 @@@"
        );
    }

    #[test]
    fn rejects_out_of_range_label() {
        let (t, ls) = sst2();
        let d = Demonstration::new("x", 2);
        assert_eq!(
            render_demonstration(&d, &t, &ls),
            Err(PromptError::InvalidLabel {
                label: 2,
                classes: 2
            })
        );
    }

    #[test]
    fn placeholder_text_inside_input_is_not_rescanned() {
        let t = minimal();
        let ls = t.label_space().unwrap();
        let d = Demonstration::new("{label}", 1);
        assert_eq!(render_demonstration(&d, &t, &ls).unwrap(), "X: {label}\nY: b");
    }

    #[test]
    fn zero_and_one_shot_layout() {
        let t = minimal();
        let ls = t.label_space().unwrap();
        let q = Input::text("q");
        let p0 = assemble_prompt(&q, &[], &t, &ls).unwrap();
        assert_eq!(p0.rendered_text, "H\nX: q\nY:");
        assert_eq!(p0.demo_count, 0);

        let d = Demonstration::new("d", 1);
        let p1 = assemble_prompt(&q, std::slice::from_ref(&d), &t, &ls).unwrap();
        assert_eq!(p1.rendered_text, "H\nX: d\nY: b\n\nX: q\nY:");
        assert_eq!(p1.demo_count, 1);
    }

    #[test]
    fn order_matters() {
        let (t, ls) = sst2();
        let a = Demonstration::new("first", 0);
        let b = Demonstration::new("second", 1);
        let q = Input::text("q");
        let ab = assemble_prompt(&q, &[a.clone(), b.clone()], &t, &ls).unwrap();
        let ba = assemble_prompt(&q, &[b, a], &t, &ls).unwrap();
        assert_ne!(ab.rendered_text, ba.rendered_text);
        assert_eq!(ab.demo_count, ba.demo_count);
    }

    #[test]
    fn validation_prompts_share_demos() {
        let (t, ls) = sst2();
        let demos: Vec<_> = (0..4).map(|i| Demonstration::new(format!("d{i}"), i % 2)).collect();
        let val: Vec<_> = (0..10).map(|i| Demonstration::new(format!("v{i}"), i % 2)).collect();
        let prompts = build_validation_prompts(&val, &demos, &t, &ls).unwrap();
        assert_eq!(prompts.len(), 10);
        for ((p, y), v) in prompts.iter().zip(&val) {
            assert_eq!(p.demo_count, 4);
            assert_eq!(*y, v.label);
            assert_eq!(
                p.rendered_text,
                assemble_prompt(&v.input, &demos, &t, &ls).unwrap().rendered_text
            );
        }
        let dup = vec![val[0].clone(), val[0].clone()];
        assert_eq!(build_validation_prompts(&dup, &demos, &t, &ls).unwrap().len(), 2);
        assert!(build_validation_prompts(&[], &demos, &t, &ls).unwrap().is_empty());
    }

    #[test]
    fn content_free_query() {
        let (t, ls) = sst2();
        let p = content_free_prompt(&[], &t, &ls, DEFAULT_CONTENT_FREE_TOKEN).unwrap();
        assert_eq!(p.rendered_text, "Review: N/A\nSentiment:");
        let empty = content_free_prompt(&[], &t, &ls, "").unwrap();
        assert_eq!(empty.rendered_text, "Review: \nSentiment:");

        let rte = PromptTemplate::builtin("rte").unwrap();
        let rte_ls = rte.label_space().unwrap();
        let p = content_free_prompt(&[], &rte, &rte_ls, "N/A").unwrap();
        assert_eq!(p.rendered_text, "N/A\nquestion: N/A True or False?\nanswer:");
    }

    #[test]
    fn pair_template_rejects_single_input() {
        let rte = PromptTemplate::builtin("rte").unwrap();
        let ls = rte.label_space().unwrap();
        let err = assemble_prompt(&Input::text("x"), &[], &rte, &ls).unwrap_err();
        assert!(matches!(err, PromptError::InputShape { .. }));
    }

    #[test]
    fn template_validation() {
        let mut t = minimal();
        t.input_pattern = "{input} {input}".into();
        assert!(t.validate().is_err());
        let mut t = minimal();
        t.output_pattern = "no slot".into();
        assert!(t.validate().is_err());
        let mut t = minimal();
        t.verbalizers = vec!["a".into(), "a".into()];
        assert!(t.validate().is_err());
        for name in PromptTemplate::builtin_names() {
            PromptTemplate::builtin(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn template_json_rejects_unknown_keys() {
        let text = r#"{"input_pattern":"{input}","output_pattern":"{label}","query_suffix":"",
                      "verbalizers":["a","b"],"extra":1}"#;
        assert!(PromptTemplate::from_json(text).is_err());
    }

    #[test]
    fn label_space_invariants() {
        assert!(LabelSpace::new(&["only"]).is_err());
        assert!(LabelSpace::new(&["a", ""]).is_err());
        assert!(LabelSpace::new(&["a", "a"]).is_err());
        let ls = LabelSpace::new(&["a", "b", "c"]).unwrap();
        assert_eq!(ls.classes()[2].index, 2);
    }

    #[test]
    fn largest_remainder_quotas() {
        assert_eq!(proportion_quotas(8, &[1.0, 0.0]).unwrap(), vec![8, 0]);
        assert_eq!(proportion_quotas(8, &[0.5, 0.5]).unwrap(), vec![4, 4]);
        assert_eq!(
            proportion_quotas(4, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap(),
            vec![2, 1, 1]
        );
        assert!(proportion_quotas(4, &[0.6, 0.6]).is_err());
    }

    fn binary_pool(n: usize) -> Vec<Demonstration> {
        (0..n).map(|i| Demonstration::new(format!("ex{i}"), i % 2)).collect()
    }

    #[test]
    fn sampling_with_proportions() {
        let pool = binary_pool(40);
        let demos = sample_demonstrations(&pool, 8, 3, Some(&[1.0, 0.0])).unwrap();
        assert_eq!(demos.len(), 8);
        assert!(demos.iter().all(|d| d.label == 0));
        assert!(sample_demonstrations(&pool, 0, 3, None).unwrap().is_empty());
        assert_eq!(
            sample_demonstrations(&pool, 8, 11, None).unwrap(),
            sample_demonstrations(&pool, 8, 11, None).unwrap()
        );
    }

    #[test]
    fn unrealizable_quota_names_class() {
        let pool = binary_pool(6);
        let err = sample_demonstrations(&pool, 6, 0, Some(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, PromptError::QuotaUnrealizable { class: 1, .. }));
        assert!(sample_demonstrations(&pool, 7, 0, None).is_err());
    }

    #[test]
    fn permutations() {
        let one = vec![Demonstration::new("x", 0)];
        assert_eq!(permute_demonstrations(&one, 5), one);
        let demos = binary_pool(8);
        let mut orders = std::collections::HashSet::new();
        for seed in 0..8 {
            let p = permute_demonstrations(&demos, seed);
            let mut sorted = p.clone();
            sorted.sort_by_key(|d| d.input.key());
            let mut expected = demos.clone();
            expected.sort_by_key(|d| d.input.key());
            assert_eq!(sorted, expected);
            assert_eq!(p, permute_demonstrations(&demos, seed));
            orders.insert(p.iter().map(|d| d.input.key()).collect::<Vec<_>>());
        }
        assert!(orders.len() > 1);
    }

    #[test]
    fn token_budget() {
        let mk = |n: usize| Prompt {
            rendered_text: "a".repeat(n),
            demo_count: 0,
            query_input: Input::text(""),
            provenance: Provenance::default(),
        };
        assert_eq!(
            estimate_token_budget(&mk(0), 1, None),
            TokenBudget { estimate: 0, fits: true }
        );
        assert_eq!(
            estimate_token_budget(&mk(4000), 1024, None),
            TokenBudget { estimate: 1000, fits: true }
        );
        assert_eq!(
            estimate_token_budget(&mk(4100), 1024, None),
            TokenBudget { estimate: 1025, fits: false }
        );
        assert_eq!(estimate_token_budget(&mk(4100), 1024, Some(10)).estimate, 10);
    }
}
