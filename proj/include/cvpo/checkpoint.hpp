#pragma once

#include "cvpo/cmdp.hpp"
#include "cvpo/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace cvpo {

/**
 * Checkpoint layout: a directory holding
 *   manifest.json  metadata plus a list of named arrays with shapes and
 *                  offsets into the parameter file
 *   params.bin     all array entries as native-endian IEEE-754 doubles,
 *                  row-major, concatenated in manifest order
 */
class CheckpointWriter {
public:
    nlohmann::ordered_json meta;

    void add(const std::string& name, const Mat& m) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["rows"] = m.rows();
        e["cols"] = m.cols();
        e["offset"] = data_.size();
        arrays_.push_back(e);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) data_.push_back(m(i, j));
    }

    void add(const std::string& name, const Vec& v) {
        add(name, Mat(v.transpose()));
    }

    void write(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::ordered_json manifest;
        manifest["format"] = 1;
        manifest["meta"] = meta;
        manifest["arrays"] = arrays_;
        {
            std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
            require(static_cast<bool>(out), "checkpoint: cannot write manifest in '" + dir + "'");
            out << manifest.dump(2) << "\n";
        }
        {
            std::ofstream out(fs::path(dir) / "params.bin", std::ios::trunc | std::ios::binary);
            require(static_cast<bool>(out), "checkpoint: cannot write params in '" + dir + "'");
            out.write(reinterpret_cast<const char*>(data_.data()),
                      static_cast<std::streamsize>(data_.size() * sizeof(double)));
        }
    }

private:
    nlohmann::ordered_json arrays_ = nlohmann::ordered_json::array();
    std::vector<double> data_;
};

struct LoadedCheckpoint {
    nlohmann::ordered_json meta;
    std::map<std::string, Mat> arrays;

    const Mat& get(const std::string& name) const {
        const auto it = arrays.find(name);
        require(it != arrays.end(), "checkpoint: missing array '" + name + "'");
        return it->second;
    }

    Vec get_flat(const std::string& name) const {
        const Mat& m = get(name);
        Vec v(m.size());
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
        return v;
    }
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream min(fs::path(dir) / "manifest.json");
    require(static_cast<bool>(min), "checkpoint: cannot open manifest in '" + dir + "'");
    nlohmann::ordered_json manifest;
    try {
        min >> manifest;
    } catch (const std::exception& e) {
        throw ContractError(std::string("checkpoint: bad manifest: ") + e.what());
    }
    require(manifest.contains("format") && manifest["format"] == 1,
            "checkpoint: unsupported manifest format");

    std::ifstream pin(fs::path(dir) / "params.bin", std::ios::binary);
    require(static_cast<bool>(pin), "checkpoint: cannot open params in '" + dir + "'");
    std::vector<double> data;
    {
        pin.seekg(0, std::ios::end);
        const auto bytes = pin.tellg();
        pin.seekg(0);
        require(bytes % sizeof(double) == 0, "checkpoint: params.bin size not a double multiple");
        data.resize(static_cast<std::size_t>(bytes) / sizeof(double));
        pin.read(reinterpret_cast<char*>(data.data()), bytes);
    }

    LoadedCheckpoint out;
    out.meta = manifest.value("meta", nlohmann::ordered_json::object());
    for (const auto& e : manifest["arrays"]) {
        const std::string name = e.at("name");
        const Eigen::Index rows = e.at("rows"), cols = e.at("cols");
        const std::size_t offset = e.at("offset");
        require(offset + static_cast<std::size_t>(rows * cols) <= data.size(),
                "checkpoint: array '" + name + "' overruns params.bin");
        Mat m(rows, cols);
        std::size_t k = offset;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[k++];
        out.arrays.emplace(name, std::move(m));
    }
    return out;
}

/// Replay buffer serialization; per-transition field order is fixed.
inline void save_buffer_json(const std::string& path, const ReplayBuffer& buf) {
    nlohmann::ordered_json root;
    root["capacity"] = buf.capacity();
    auto items = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const Transition& t = buf.at(i);
        nlohmann::ordered_json e;
        e["state"] = std::vector<double>(t.state.data(), t.state.data() + t.state.size());
        e["action"] = std::vector<double>(t.action.data(), t.action.data() + t.action.size());
        e["next_state"] =
            std::vector<double>(t.next_state.data(), t.next_state.data() + t.next_state.size());
        e["reward"] = t.reward;
        e["cost"] = t.cost;
        e["terminal"] = t.terminal;
        items.push_back(std::move(e));
    }
    root["transitions"] = std::move(items);
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), "checkpoint: cannot write buffer '" + path + "'");
    out << root.dump() << "\n";
}

inline ReplayBuffer load_buffer_json(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "checkpoint: cannot open buffer '" + path + "'");
    nlohmann::ordered_json root;
    try {
        in >> root;
    } catch (const std::exception& e) {
        throw ContractError(std::string("checkpoint: bad buffer file: ") + e.what());
    }
    ReplayBuffer buf(root.at("capacity").get<std::size_t>());
    for (const auto& e : root.at("transitions")) {
        Transition t;
        const auto to_vec = [](const nlohmann::ordered_json& a) {
            Vec v(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i];
            return v;
        };
        t.state = to_vec(e.at("state"));
        t.action = to_vec(e.at("action"));
        t.next_state = to_vec(e.at("next_state"));
        t.reward = e.at("reward");
        t.cost = e.at("cost");
        t.terminal = e.at("terminal");
        buf.push(t);
    }
    return buf;
}

}  // namespace cvpo
