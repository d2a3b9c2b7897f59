//! The LLM-instructed distortion prompt.
//!
//! The original exchange is replayed as a finished conversation, followed by a
//! request to compress it and a pre-filled assistant acceptance that ends on an
//! open quote, so the completion is the distorted response itself.

use rand::Rng;

use super::commands::CommandPool;
use super::DistortionError;
use crate::corpus::InstructionSample;

pub const SYSTEM_MESSAGE: &str = "A chat between a curious human and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the user's questions.";
pub const HUMAN_MARKER: &str = "### Human:";
pub const ASSISTANT_MARKER: &str = "### Assistant:";

pub const REWRITE_REQUEST: &str = "Your reply's style, tone, and politeness are excellent, and the content is very detailed. However, now I would like you to summarize the previous response, keeping only the most crucial information and removing all other less important content. I want a concise, straightforward reply without any redundancy. If you find that the overall quality of your response dropped, don't worry, it's fine. Note that, please do not add anything after giving me your rewritten response.";

pub const ACCEPTANCE_LEAD: &str = "Sure. I have rewritten my last response to a much shorter and more concise version, covering only the key information. I pretend to be a cold-hearted, non-talkative, socially inept robotic assistant to respond to your request.";

pub const ACCEPTANCE_TAIL: &str = "The following is the as-short-as-possible, low-quality, highly-compressed, rewritten version of my previous response, and I will not add more content after finishing this response: \"";

pub const COMMAND_PROBABILITY: f64 = 0.5;

/// Render the prompt with an explicit command choice.
pub fn render_distortion_prompt(instruction: &str, response: &str, command: Option<&str>) -> String {
    let mut acceptance = String::from(ACCEPTANCE_LEAD);
    acceptance.push(' ');
    if let Some(cmd) = command {
        acceptance.push_str(cmd);
        acceptance.push(' ');
    }
    acceptance.push_str(ACCEPTANCE_TAIL);
    format!(
        "{SYSTEM_MESSAGE}\n{HUMAN_MARKER} {instruction}\n{ASSISTANT_MARKER} {response}\n{HUMAN_MARKER} {REWRITE_REQUEST}\n{ASSISTANT_MARKER} {acceptance}"
    )
}

/// Build the distortion prompt for `sample`, inserting a uniformly drawn command
/// with probability one half. Returns the prompt and the command index used.
pub fn build_llm_distortion_prompt<R: Rng + ?Sized>(
    sample: &InstructionSample,
    pool: &CommandPool,
    rng: &mut R,
) -> Result<(String, Option<usize>), DistortionError> {
    if sample.response.trim().is_empty() {
        return Err(DistortionError::EmptyResponse(sample.id.clone()));
    }
    let index = if rng.gen_bool(COMMAND_PROBABILITY) {
        Some(rng.gen_range(0..pool.len()))
    } else {
        None
    };
    let command = index.and_then(|i| pool.get(i));
    Ok((
        render_distortion_prompt(&sample.instruction, &sample.response, command),
        index,
    ))
}

/// Cut an LLM completion at the closing quote that terminates the distorted text.
pub fn extract_quoted_completion(completion: &str) -> &str {
    let end = completion.find('"').unwrap_or(completion.len());
    completion[..end].trim()
}
