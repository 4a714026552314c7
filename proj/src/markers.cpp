#include "scicot/markers.hpp"

namespace scicot {

std::string render_question_block(const McqExample& ex) {
    std::string out = std::string(kQuestionMarker) + " " + ex.stem + "\n" + kOptionsMarker;
    for (const auto& c : ex.choices) {
        out += " " + c.label + ") " + c.text;
    }
    return out;
}

std::string answer_surface_form(const McqExample& ex) {
    const Choice& gold = ex.gold_choice();
    return gold.label + ") " + gold.text;
}

}  // namespace scicot
