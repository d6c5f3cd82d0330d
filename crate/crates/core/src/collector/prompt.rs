use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Setting;

pub const REFERENCE_PLACEHOLDER: &str = "{{Reference}}";
pub const CAPTION_PLACEHOLDER: &str = "{{Caption}}";
/// Appears in the response-format instructions and is sent verbatim.
pub const SCORE_LITERAL: &str = "{{score}}";

const GENERATION: &str = include_str!("../../prompts/generation.txt");
const EVAL_REF_BASED: &str = include_str!("../../prompts/eval_ref_based.txt");
const EVAL_REF_FREE: &str = include_str!("../../prompts/eval_ref_free.txt");

/// Caption-generation prompt and the two evaluation templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub generation_prompt: String,
    pub eval_prompt_ref_based: String,
    pub eval_prompt_ref_free: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        PromptBundle {
            generation_prompt: GENERATION.trim_end().to_string(),
            eval_prompt_ref_based: EVAL_REF_BASED.trim_end().to_string(),
            eval_prompt_ref_free: EVAL_REF_FREE.trim_end().to_string(),
        }
    }
}

impl PromptBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: PromptBundle = serde_json::from_str(&text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn template(&self, setting: Setting) -> &str {
        match setting {
            Setting::ReferenceBased => &self.eval_prompt_ref_based,
            Setting::ReferenceFree => &self.eval_prompt_ref_free,
        }
    }

    /// Checks that each template uses exactly the placeholders its setting allows.
    pub fn validate(&self) -> Result<()> {
        check_template(&self.eval_prompt_ref_based, true)?;
        check_template(&self.eval_prompt_ref_free, false)?;
        if self.generation_prompt.contains("{{") {
            return Err(Error::Prompt("generation prompt must not contain placeholders".into()));
        }
        Ok(())
    }
}

fn check_template(template: &str, reference_based: bool) -> Result<()> {
    let mut rest = template;
    let mut saw_caption = false;
    let mut saw_reference = false;
    while let Some(start) = rest.find("{{") {
        let tail = &rest[start..];
        let end = tail
            .find("}}")
            .ok_or_else(|| Error::Prompt("unterminated `{{` in template".into()))?;
        let token = &tail[..end + 2];
        match token {
            CAPTION_PLACEHOLDER => saw_caption = true,
            REFERENCE_PLACEHOLDER if reference_based => saw_reference = true,
            SCORE_LITERAL => {}
            other => return Err(Error::Prompt(format!("unresolved placeholder `{other}`"))),
        }
        rest = &tail[end + 2..];
    }
    if !saw_caption {
        return Err(Error::Prompt(format!("template lacks {CAPTION_PLACEHOLDER}")));
    }
    if reference_based && !saw_reference {
        return Err(Error::Prompt(format!("reference-based template lacks {REFERENCE_PLACEHOLDER}")));
    }
    Ok(())
}

/// Fills an evaluation template for one caption.
///
/// References are required exactly when the setting is reference-based and
/// are inserted one per line. Substituted text is not rescanned, so captions
/// containing braces are inserted verbatim.
pub fn render_prompt(
    bundle: &PromptBundle,
    setting: Setting,
    caption: &str,
    references: Option<&[String]>,
) -> Result<String> {
    let reference_based = setting == Setting::ReferenceBased;
    let refs = match (reference_based, references) {
        (true, Some(r)) if !r.is_empty() => Some(r.join("\n")),
        (true, _) => {
            return Err(Error::Prompt("reference-based evaluation requires references".into()));
        }
        (false, Some(_)) => {
            return Err(Error::Prompt("reference-free evaluation takes no references".into()));
        }
        (false, None) => None,
    };
    let template = bundle.template(setting);
    check_template(template, reference_based)?;

    let mut out = String::with_capacity(template.len() + caption.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let end = tail.find("}}").expect("checked") + 2;
        match &tail[..end] {
            CAPTION_PLACEHOLDER => out.push_str(caption),
            REFERENCE_PLACEHOLDER => out.push_str(refs.as_deref().expect("checked")),
            literal => out.push_str(literal),
        }
        rest = &tail[end..];
    }
    out.push_str(rest);
    Ok(out)
}
