#pragma once

#include <map>
#include <string>

#include "saltseg/model.hpp"

namespace oracles {

using saltseg::Index;
using saltseg::ModelConfig;
using saltseg::Shape;

// Independent shape walk over the documented channel plan. Kept free of any
// SegModel code so parameter-count assertions have a second derivation.
struct ShapeOracle {
    std::map<std::string, Shape> entries;

    static ShapeOracle walk(const ModelConfig& c) {
        ShapeOracle o;
        const Index f = c.base_filters;
        const Index r = c.se_reduction;
        auto conv = [&o](const std::string& p, Index co, Index ci, Index k, bool bias) {
            o.entries[p + ".w"] = {co, ci, k, k};
            if (bias) o.entries[p + ".b"] = {co};
        };
        auto bn = [&o](const std::string& p, Index ch) {
            o.entries[p + ".gamma"] = {ch};
            o.entries[p + ".beta"] = {ch};
            o.entries[p + ".mean"] = {ch};
            o.entries[p + ".var"] = {ch};
        };
        auto dense_ = [&o](const std::string& p, Index fo, Index fi) {
            o.entries[p + ".w"] = {fo, fi};
            o.entries[p + ".b"] = {fo};
        };
        auto scse = [&](const std::string& p, Index ch) {
            dense_(p + ".ch.fc1", ch / r, ch);
            dense_(p + ".ch.fc2", ch, ch / r);
            conv(p + ".sp", 1, ch, 1, true);
        };
        auto attention = [&](const std::string& p, Index skip_c, Index gate_c) {
            conv(p + ".theta", skip_c / 2, skip_c, 1, true);
            conv(p + ".phi", skip_c / 2, gate_c, 1, true);
            conv(p + ".psi", 1, skip_c / 2, 1, true);
            dense_(p + ".ch.fc1", skip_c / r, skip_c);
            dense_(p + ".ch.fc2", skip_c, skip_c / r);
        };

        const Index cin = 1 + (c.use_depth_channel ? 1 : 0) + (c.use_coordconv ? 2 : 0);
        conv("stem.conv", f, cin, 3, false);
        bn("stem.bn", f);

        Index in_c = f;
        for (int s = 1; s <= 4; ++s) {
            const Index w = f << s;
            const Index mid = w / 2;
            for (int i = 0; i < c.encoder_blocks[static_cast<std::size_t>(s - 1)]; ++i) {
                const std::string p = "enc" + std::to_string(s) + ".b" + std::to_string(i);
                conv(p + ".reduce", mid, i == 0 ? in_c : w, 1, false);
                bn(p + ".bn1", mid);
                conv(p + ".grouped", mid, mid / c.cardinality, 3, false);
                bn(p + ".bn2", mid);
                conv(p + ".expand", w, mid, 1, false);
                bn(p + ".bn3", w);
                if (c.use_scse) scse(p + ".scse", w);
                if (i == 0 && in_c != w) {
                    conv(p + ".proj", w, in_c, 1, false);
                    bn(p + ".bnp", w);
                }
            }
            in_c = w;
        }

        const Index w4 = f << 4;
        conv("center.conv1", w4, w4, 3, false);
        bn("center.bn1", w4);
        conv("center.conv2", w4, w4, 3, false);
        bn("center.bn2", w4);

        Index gate_c = w4;
        for (int d = 4; d >= 1; --d) {
            const std::string p = "dec" + std::to_string(d);
            const Index skip_c = d == 1 ? f : (f << (d - 1));
            const Index out_c = f << (d - 1);
            if (c.use_attention_gates) attention(p + ".att", skip_c, gate_c);
            conv(p + ".conv1", out_c, gate_c + skip_c, 3, false);
            bn(p + ".bn1", out_c);
            conv(p + ".conv2", out_c, out_c, 3, false);
            bn(p + ".bn2", out_c);
            if (c.use_scse) scse(p + ".scse", out_c);
            gate_c = out_c;
        }

        if (c.use_hypercolumn) {
            for (int d = 4; d >= 1; --d) conv("dsv" + std::to_string(d), f, f << (d - 1), 1, true);
            conv("head", 1, 5 * f, 1, true);
        } else {
            conv("head", 1, f, 1, true);
        }
        return o;
    }

    static bool is_buffer(const std::string& name) {
        auto ends = [&name](const char* s) {
            const std::size_t n = std::string_view(s).size();
            return name.size() >= n && name.compare(name.size() - n, n, s) == 0;
        };
        return ends(".mean") || ends(".var");
    }

    Index param_count() const {
        Index total = 0;
        for (const auto& [name, shape] : entries) {
            if (!is_buffer(name)) total += saltseg::shape_numel(shape);
        }
        return total;
    }
};


}  // namespace oracles
