#include "cmw/checkpoint.hpp"

#include "cmw/io.hpp"

#include <algorithm>
#include <fstream>

namespace cmw {

void save_checkpoint(const ModelParams<float>& params, const ModelConfig& config, const std::filesystem::path& path)
{
    config.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("save_checkpoint: cannot open " + path.string());
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    le::write(os, static_cast<std::uint32_t>(config.in_channels));
    le::write(os, static_cast<std::uint32_t>(config.base_width));
    le::write(os, static_cast<std::uint32_t>(config.height));
    le::write(os, static_cast<std::uint32_t>(config.width));
    le::write(os, config.leaky_slope);
    le::write(os, config.seed);
    le::write(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.entries()) {
        le::write(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        le::write(os, static_cast<std::uint32_t>(t.rank()));
        for (Index d : t.shape()) le::write(os, static_cast<std::uint32_t>(d));
        for (Index i = 0; i < t.numel(); ++i) le::write(os, t.at(i));
    }
    if (!os) throw FormatError("save_checkpoint: write failed for " + path.string());
}

std::pair<ModelParams<float>, ModelConfig> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("load_checkpoint: cannot open " + path.string());
    const std::string what = "load_checkpoint(" + path.string() + ")";
    char magic[sizeof(kCheckpointMagic)];
    if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kCheckpointMagic)) {
        throw FormatError(what + ": not a checkpoint (magic mismatch)");
    }
    ModelConfig config;
    config.in_channels = static_cast<int>(le::read<std::uint32_t>(is, what));
    config.base_width = static_cast<int>(le::read<std::uint32_t>(is, what));
    config.height = static_cast<int>(le::read<std::uint32_t>(is, what));
    config.width = static_cast<int>(le::read<std::uint32_t>(is, what));
    config.leaky_slope = le::read<float>(is, what);
    config.seed = le::read<std::uint64_t>(is, what);
    try {
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(what + ": " + e.what());
    }

    const auto count = le::read<std::uint32_t>(is, what);
    ModelParams<float> params;
    for (std::uint32_t p = 0; p < count; ++p) {
        const auto len = le::read<std::uint32_t>(is, what);
        if (len > 4096) throw FormatError(what + ": implausible parameter name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError(what + ": truncated file");
        const auto rank = le::read<std::uint32_t>(is, what);
        if (rank > 8) throw FormatError(what + ": implausible tensor rank");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(le::read<std::uint32_t>(is, what));
        ArrayX<float> data(shape_numel(shape));
        for (Index i = 0; i < data.size(); ++i) data[i] = le::read<float>(is, what);
        params.add(std::move(name), Tensor<float>(std::move(shape), std::move(data), true));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes");

    // The parameter set must be exactly the one the config implies.
    std::vector<std::pair<std::string, Shape>> expected;
    for (const auto& l : layer_table(config)) {
        const Index k = l.kernel;
        expected.emplace_back(l.name + ".weight", l.kind == LayerKind::Conv ? Shape{l.out_channels, l.in_channels, k, k}
                                                                            : Shape{l.in_channels, l.out_channels, k, k});
        expected.emplace_back(l.name + ".bias", Shape{l.out_channels});
    }
    if (expected.size() != params.size()) throw FormatError(what + ": parameter set does not match config");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params.entries()[i];
        if (expected[i].first != name || expected[i].second != t.shape()) {
            throw FormatError(what + ": parameter " + name + " does not match config");
        }
    }
    return {std::move(params), config};
}

} // namespace cmw
