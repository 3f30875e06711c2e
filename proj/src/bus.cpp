// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/bus.hpp"

#include <sodium.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>

#include "david/error.hpp"

namespace david {

std::string device_name(DeviceId id) {
  switch (id) {
    case device::kHub: return "hub";
    case device::kAudioNode: return "audio";
    case device::kVisionNode: return "vision";
    case device::kApp: return "app";
    case device::kActuators: return "actuators";
    case device::kTtsNode: return "tts";
    default: return "dev" + std::to_string(id);
  }
}

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> t{};
  for (unsigned i = 0; i < 256; ++i) {
    std::uint16_t c = static_cast<std::uint16_t>(i << 8);
    for (int b = 0; b < 8; ++b) c = static_cast<std::uint16_t>((c & 0x8000) ? (c << 1) ^ 0x1021 : c << 1);
    t[i] = c;
  }
  return t;
}

constexpr auto kCrcTable = make_crc_table();

}  // namespace

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) noexcept {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : data) crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ b) & 0xFF]);
  return crc;
}

Bytes encode_frame(const BusFrame& f) {
  if (f.payload.size() > 0xFFFF) raise(ErrorKind::ConfigError, "payload exceeds 65535 bytes");
  const auto len = static_cast<std::uint16_t>(f.payload.size());
  Bytes out(8 + f.payload.size());
  out[0] = kSync;
  out[1] = f.version;
  out[2] = f.src;
  out[3] = f.dst;
  out[4] = f.msg_type;
  out[5] = f.flags;
  out[6] = static_cast<std::uint8_t>(len & 0xFF);
  out[7] = static_cast<std::uint8_t>(len >> 8);
  std::copy(f.payload.begin(), f.payload.end(), out.begin() + 8);
  const std::uint16_t crc = crc16_ccitt(std::span(out).subspan(1));
  out.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  return out;
}

BusFrame decode_frame(std::span<const std::uint8_t> data, std::size_t* consumed) {
  if (data.empty()) raise(ErrorKind::Truncated, "empty input");
  if (data[0] != kSync) raise(ErrorKind::BadSync, "frame does not start with the sync byte");
  if (data.size() < 2) raise(ErrorKind::Truncated, "frame header truncated");
  if (data[1] != kBusVersion) raise(ErrorKind::UnsupportedVersion, "unsupported bus version " + std::to_string(data[1]));
  if (data.size() < 8) raise(ErrorKind::Truncated, "frame header truncated");
  const std::size_t len = data[6] | (static_cast<std::size_t>(data[7]) << 8);
  const std::size_t total = len + kFrameOverhead;
  if (data.size() < total) raise(ErrorKind::Truncated, "frame truncated");
  const std::uint16_t want = static_cast<std::uint16_t>(data[8 + len] | (data[9 + len] << 8));
  if (crc16_ccitt(data.subspan(1, 7 + len)) != want) raise(ErrorKind::CrcMismatch, "frame CRC mismatch");
  BusFrame f;
  f.version = data[1];
  f.src = data[2];
  f.dst = data[3];
  f.msg_type = data[4];
  f.flags = data[5];
  f.payload.assign(data.begin() + 8, data.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  if (consumed) *consumed = total;
  return f;
}

void FrameScanner::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<BusFrame> FrameScanner::next() {
  while (pos_ < buf_.size()) {
    std::size_t used = 0;
    try {
      BusFrame f = decode_frame(std::span(buf_).subspan(pos_), &used);
      pos_ += used;
      return f;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Truncated) return std::nullopt;
      ++pos_;
      ++skipped_;
      while (pos_ < buf_.size() && buf_[pos_] != kSync) {
        ++pos_;
        ++skipped_;
      }
    }
  }
  return std::nullopt;
}

std::string to_string(Taint t) { return t == Taint::PID ? "pid" : "public"; }

namespace {

constexpr std::pair<WireType, const char*> kWireNames[] = {
    {WireType::U8, "u8"},         {WireType::U16, "u16"},     {WireType::I32, "i32"},       {WireType::F32, "f32"},
    {WireType::F32Array, "f32[]"}, {WireType::Bytes, "bytes"}, {WireType::String, "string"},
};

WireType wire_from_string(const std::string& s) {
  for (const auto& [w, n] : kWireNames)
    if (s == n) return w;
  raise(ErrorKind::ParseError, "unknown wire type '" + s + "'");
}

Taint taint_from_string(const std::string& s) {
  if (s == "pid" || s == "PID") return Taint::PID;
  if (s == "public" || s == "Public") return Taint::Public;
  raise(ErrorKind::ParseError, "unknown taint label '" + s + "'");
}

}  // namespace

std::string to_string(WireType w) {
  for (const auto& [k, n] : kWireNames)
    if (k == w) return n;
  return "?";
}

const FieldSchema* MessageSchema::field(const std::string& n) const {
  for (const auto& f : fields)
    if (f.name == n) return &f;
  return nullptr;
}

void SchemaRegistry::add(MessageSchema s) {
  if (schemas_.count(s.msg_type)) raise(ErrorKind::ConfigError, "duplicate message type " + std::to_string(s.msg_type));
  std::set<std::string> names;
  for (const auto& f : s.fields) {
    if (!names.insert(f.name).second) raise(ErrorKind::ConfigError, "duplicate field '" + f.name + "' in " + s.name);
  }
  schemas_.emplace(s.msg_type, std::move(s));
}

const MessageSchema* SchemaRegistry::find(std::uint8_t t) const {
  auto it = schemas_.find(t);
  return it == schemas_.end() ? nullptr : &it->second;
}

const MessageSchema& SchemaRegistry::at(std::uint8_t t) const {
  const auto* s = find(t);
  if (!s) raise(ErrorKind::UnknownMessageType, "message type " + std::to_string(t) + " is not registered");
  return *s;
}

SchemaRegistry SchemaRegistry::from_json(const Json& j) {
  SchemaRegistry r;
  try {
    for (const auto& m : j.at("messages")) {
      MessageSchema s;
      const auto type = m.at("type").get<int>();
      if (type < 0 || type > 255) raise(ErrorKind::ParseError, "message type out of range");
      s.msg_type = static_cast<std::uint8_t>(type);
      s.name = m.value("name", "");
      for (const auto& f : m.at("fields")) {
        s.fields.push_back({f.at("name").get<std::string>(), wire_from_string(f.at("wire").get<std::string>()),
                            taint_from_string(f.at("taint").get<std::string>())});
      }
      r.add(std::move(s));
    }
  } catch (const Json::exception& e) {
    raise(ErrorKind::ParseError, std::string("schema registry: ") + e.what());
  }
  return r;
}

Json SchemaRegistry::to_json() const {
  Json msgs = Json::array();
  for (const auto& [t, s] : schemas_) {
    Json fields = Json::array();
    for (const auto& f : s.fields) fields.push_back({{"name", f.name}, {"wire", to_string(f.wire)}, {"taint", to_string(f.taint)}});
    msgs.push_back({{"type", t}, {"name", s.name}, {"fields", fields}});
  }
  return {{"messages", msgs}};
}

const SchemaRegistry& default_registry() {
  static const SchemaRegistry r = [] {
    using W = WireType;
    constexpr Taint P = Taint::Public, X = Taint::PID;
    SchemaRegistry reg;
    reg.add({msg::kWake, "wake", {{"reason", W::String, P}}});
    reg.add({msg::kTranscript, "transcript", {{"text", W::String, P}, {"confidence", W::F32, P}}});
    reg.add({msg::kAudioSamples, "audio_samples", {{"sample_rate", W::U16, P}, {"samples", W::F32Array, X}}});
    reg.add({msg::kSpeak, "speak", {{"text", W::String, P}}});
    reg.add({msg::kDetections,
             "detections",
             {{"class_id", W::U8, P},
              {"box", W::F32Array, P},
              {"expression", W::U8, P},
              {"gesture", W::U8, P},
              {"landmarks", W::F32Array, P}}});
    reg.add({msg::kFaceEmbedding, "face_embedding", {{"embedding", W::F32Array, X}}});
    reg.add({msg::kImageFrame, "image_frame", {{"width", W::U16, P}, {"height", W::U16, P}, {"pixels", W::Bytes, X}}});
    reg.add({msg::kVideoChunk, "video_chunk", {{"data", W::Bytes, X}}});
    reg.add({msg::kSecureStream, "secure_stream", {{"chunk", W::Bytes, X}}});
    reg.add({msg::kAction, "action", {{"action", W::String, P}}});
    reg.add({msg::kPairRequest, "pair_request", {{"app_id", W::U8, P}}});
    reg.add({msg::kReflash, "reflash", {{"node", W::U8, P}, {"firmware", W::String, P}, {"size", W::I32, P}}});
    return reg;
  }();
  return r;
}

bool populates_pid(const Message& m, const SchemaRegistry& reg) {
  const auto& s = reg.at(m.msg_type);
  for (const auto& [name, _] : m.fields) {
    const auto* f = s.field(name);
    if (f && f->taint == Taint::PID) return true;
  }
  return false;
}

namespace {

void put_u16(Bytes& out, std::size_t v) {
  if (v > 0xFFFF) raise(ErrorKind::ConfigError, "field too long for the wire");
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
const T& expect(const FieldValue& v, const FieldSchema& f) {
  if (const T* p = std::get_if<T>(&v)) return *p;
  raise(ErrorKind::ConfigError, "field '" + f.name + "' expects wire type " + to_string(f.wire));
}

struct Reader {
  std::span<const std::uint8_t> d;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > d.size()) raise(ErrorKind::Truncated, "payload truncated");
  }
  std::uint8_t u8() {
    need(1);
    return d[pos++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(d[pos] | (d[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(d[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
};

}  // namespace

Bytes encode_payload(const Message& m, const SchemaRegistry& reg) {
  const auto& s = reg.at(m.msg_type);
  for (const auto& [name, _] : m.fields) {
    if (!s.field(name)) raise(ErrorKind::ConfigError, "field '" + name + "' is not in schema " + s.name);
  }
  Bytes out;
  for (const auto& f : s.fields) {
    auto it = m.fields.find(f.name);
    if (it == m.fields.end()) {
      out.push_back(0);
      continue;
    }
    out.push_back(1);
    const FieldValue& v = it->second;
    switch (f.wire) {
      case WireType::U8: out.push_back(static_cast<std::uint8_t>(expect<std::int64_t>(v, f))); break;
      case WireType::U16: put_u16(out, static_cast<std::size_t>(expect<std::int64_t>(v, f) & 0xFFFF)); break;
      case WireType::I32: put_u32(out, static_cast<std::uint32_t>(expect<std::int64_t>(v, f))); break;
      case WireType::F32: put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(expect<double>(v, f)))); break;
      case WireType::F32Array: {
        const auto& a = expect<std::vector<float>>(v, f);
        put_u16(out, a.size());
        for (float x : a) put_u32(out, std::bit_cast<std::uint32_t>(x));
        break;
      }
      case WireType::Bytes: {
        const auto& b = expect<Bytes>(v, f);
        put_u16(out, b.size());
        out.insert(out.end(), b.begin(), b.end());
        break;
      }
      case WireType::String: {
        const auto& str = expect<std::string>(v, f);
        put_u16(out, str.size());
        out.insert(out.end(), str.begin(), str.end());
        break;
      }
    }
  }
  return out;
}

Message decode_payload(std::uint8_t msg_type, std::span<const std::uint8_t> payload, const SchemaRegistry& reg) {
  const auto& s = reg.at(msg_type);
  Message m;
  m.msg_type = msg_type;
  Reader r{payload};
  for (const auto& f : s.fields) {
    const std::uint8_t present = r.u8();
    if (present == 0) continue;
    if (present != 1) raise(ErrorKind::ParseError, "bad presence byte for '" + f.name + "'");
    switch (f.wire) {
      case WireType::U8: m.fields[f.name] = std::int64_t{r.u8()}; break;
      case WireType::U16: m.fields[f.name] = std::int64_t{r.u16()}; break;
      case WireType::I32: m.fields[f.name] = std::int64_t{static_cast<std::int32_t>(r.u32())}; break;
      case WireType::F32: m.fields[f.name] = double{std::bit_cast<float>(r.u32())}; break;
      case WireType::F32Array: {
        std::vector<float> a(r.u16());
        for (auto& x : a) x = std::bit_cast<float>(r.u32());
        m.fields[f.name] = std::move(a);
        break;
      }
      case WireType::Bytes:
      case WireType::String: {
        const std::size_t n = r.u16();
        r.need(n);
        auto first = payload.begin() + static_cast<std::ptrdiff_t>(r.pos);
        if (f.wire == WireType::Bytes) {
          m.fields[f.name] = Bytes(first, first + static_cast<std::ptrdiff_t>(n));
        } else {
          m.fields[f.name] = std::string(first, first + static_cast<std::ptrdiff_t>(n));
        }
        r.pos += n;
        break;
      }
    }
  }
  if (r.pos != payload.size()) raise(ErrorKind::ParseError, "trailing bytes in payload");
  return m;
}

BusFrame make_frame(const Message& m, DeviceId src, DeviceId dst, const SchemaRegistry& reg) {
  BusFrame f;
  f.src = src;
  f.dst = dst;
  f.msg_type = m.msg_type;
  f.flags = populates_pid(m, reg) ? kFlagPid : 0;
  f.payload = encode_payload(m, reg);
  return f;
}

std::string to_string(DenyReason r) {
  switch (r) {
    case DenyReason::None: return "none";
    case DenyReason::PrivacyViolation: return "PrivacyViolation";
    case DenyReason::TaintFlagMismatch: return "TaintFlagMismatch";
  }
  return "?";
}

EgressDecision guard_egress(const Message& m, std::uint8_t flags, DeviceId src, DeviceId dst,
                            const SchemaRegistry& reg, const LinkState& link) {
  const bool pid = populates_pid(m, reg);
  if (((flags & kFlagPid) != 0) != pid) return EgressDecision::deny(DenyReason::TaintFlagMismatch);
  if (!pid) return EgressDecision::allow();
  // Node-local traffic stays on the node; the hub and the app never hold PID.
  if (dst == src && dst != device::kHub && dst != link.app) return EgressDecision::allow();
  if (m.msg_type == msg::kSecureStream && link.paired && dst == link.app) return EgressDecision::allow();
  return EgressDecision::deny(DenyReason::PrivacyViolation);
}

namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) raise(ErrorKind::ConfigError, "libsodium failed to initialise");
}

constexpr char kPairContext[] = "david-edge pairing v1";

}  // namespace

void SecureChannel::pair(std::span<const std::uint8_t> key_material) {
  ensure_sodium();
  if (paired()) raise(ErrorKind::AlreadyPaired, "channel is already paired");
  if (key_material.empty()) raise(ErrorKind::ConfigError, "empty key material");
  std::array<std::uint8_t, 32> k{};
  static_assert(sizeof(k) == crypto_aead_chacha20poly1305_KEYBYTES);
  crypto_generichash(k.data(), k.size(), key_material.data(), key_material.size(),
                     reinterpret_cast<const unsigned char*>(kPairContext), sizeof(kPairContext) - 1);
  key_ = k;
  send_nonce_ = 1;
  last_received_ = 0;
}

void SecureChannel::unpair() noexcept {
  if (key_) sodium_memzero(key_->data(), key_->size());
  key_.reset();
}

Bytes SecureChannel::stream_chunk(std::span<const std::uint8_t> plaintext) {
  if (!paired()) raise(ErrorKind::NotPaired, "stream requires a paired channel");
  static_assert(kNonceBytes == crypto_aead_chacha20poly1305_NPUBBYTES);
  static_assert(kTagBytes == crypto_aead_chacha20poly1305_ABYTES);
  Bytes out(kNonceBytes + plaintext.size() + kTagBytes);
  const std::uint64_t n = send_nonce_++;
  for (std::size_t i = 0; i < kNonceBytes; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * (kNonceBytes - 1 - i)));
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_encrypt(out.data() + kNonceBytes, &clen, plaintext.data(), plaintext.size(), nullptr, 0,
                                       nullptr, out.data(), key_->data());
  return out;
}

Bytes SecureChannel::open_chunk(std::span<const std::uint8_t> chunk) {
  if (!paired()) raise(ErrorKind::NotPaired, "receive requires a paired channel");
  if (chunk.size() < kNonceBytes + kTagBytes) raise(ErrorKind::AuthenticationFailure, "chunk too short");
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kNonceBytes; ++i) n = (n << 8) | chunk[i];
  if (n <= last_received_) raise(ErrorKind::AuthenticationFailure, "replayed or reordered nonce");
  Bytes out(chunk.size() - kNonceBytes - kTagBytes);
  unsigned long long mlen = 0;
  if (crypto_aead_chacha20poly1305_decrypt(out.data(), &mlen, nullptr, chunk.data() + kNonceBytes,
                                           chunk.size() - kNonceBytes, nullptr, 0, chunk.data(), key_->data()) != 0) {
    raise(ErrorKind::AuthenticationFailure, "chunk failed authentication");
  }
  last_received_ = n;
  return out;
}

PrivacyBus::PrivacyBus(SchemaRegistry reg) : reg_(std::move(reg)) {}

void PrivacyBus::pair_app(std::span<const std::uint8_t> key_material) {
  vision_end_.pair(key_material);
  app_end_.pair(key_material);
}

EgressDecision PrivacyBus::send(const Message& m, DeviceId src, DeviceId dst, std::optional<std::uint8_t> flags_override) {
  BusFrame f = make_frame(m, src, dst, reg_);
  if (flags_override) f.flags = *flags_override;
  const Bytes wire = encode_frame(f);
  ++frames_;
  bytes_ += wire.size();
  // the receiving side only ever sees bytes
  const BusFrame rx = decode_frame(wire);
  Message decoded = decode_payload(rx.msg_type, rx.payload, reg_);
  const EgressDecision d = guard_egress(decoded, rx.flags, rx.src, rx.dst, reg_, LinkState{paired(), device::kApp});
  if (!d.allowed) {
    denials_.push_back({rx.msg_type, rx.src, rx.dst, to_string(d.reason)});
    return d;
  }
  if (rx.msg_type == msg::kSecureStream && rx.dst == device::kApp) {
    auto it = decoded.fields.find("chunk");
    const Bytes* chunk = it == decoded.fields.end() ? nullptr : std::get_if<Bytes>(&it->second);
    try {
      if (!chunk) raise(ErrorKind::AuthenticationFailure, "missing chunk");
      app_end_.open_chunk(*chunk);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::AuthenticationFailure && e.kind() != ErrorKind::NotPaired) throw;
      denials_.push_back({rx.msg_type, rx.src, rx.dst, std::string(david::to_string(e.kind()))});
      return EgressDecision::deny(DenyReason::PrivacyViolation);
    }
  }
  inboxes_[rx.dst].push_back({rx, std::move(decoded)});
  return d;
}

const std::vector<Delivery>& PrivacyBus::inbox(DeviceId dev) const {
  static const std::vector<Delivery> empty;
  auto it = inboxes_.find(dev);
  return it == inboxes_.end() ? empty : it->second;
}

std::vector<Delivery> PrivacyBus::drain(DeviceId dev) {
  auto it = inboxes_.find(dev);
  if (it == inboxes_.end()) return {};
  std::vector<Delivery> out = std::move(it->second);
  it->second.clear();
  return out;
}

}  // namespace david
