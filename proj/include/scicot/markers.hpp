#pragma once

#include <string>

#include "scicot/corpus.hpp"

namespace scicot {

// Section markers shared by the prompt builder and all pair regimes; every
// rendered input goes through the same block renderer.
inline constexpr const char* kQuestionMarker = "Question:";
inline constexpr const char* kOptionsMarker = "Options:";
inline constexpr const char* kRationaleMarker = "Rationale:";
inline constexpr const char* kAnswerMarker = "ANSWER:";

// "Question: <stem>\nOptions: A) t1 B) t2 ..."
std::string render_question_block(const McqExample& ex);

// "B) gravity" for answer_key B; the surface form targets are rendered in
// and answer extraction accepts.
std::string answer_surface_form(const McqExample& ex);

}  // namespace scicot
