from app.instruct.embedder import InstructionEmbedder, InstructionEmbedding, embed_instruction, tokenize
from app.instruct.llm import LlmClientConfig, llm_instruction, llm_instructions
from app.instruct.templates import EditInstruction, short_caption, template_instruction

__all__ = [
    "EditInstruction",
    "InstructionEmbedder",
    "InstructionEmbedding",
    "LlmClientConfig",
    "embed_instruction",
    "llm_instruction",
    "llm_instructions",
    "short_caption",
    "template_instruction",
    "tokenize",
]
