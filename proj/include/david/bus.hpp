// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "david/serialize.hpp"

namespace david {

using Bytes = std::vector<std::uint8_t>;
using DeviceId = std::uint8_t;

namespace device {
inline constexpr DeviceId kHub = 0x01;
inline constexpr DeviceId kAudioNode = 0x02;
inline constexpr DeviceId kVisionNode = 0x03;
inline constexpr DeviceId kApp = 0x04;
inline constexpr DeviceId kActuators = 0x05;
inline constexpr DeviceId kTtsNode = 0x06;
}  // namespace device

std::string device_name(DeviceId id);

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no xorout).
std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) noexcept;

inline constexpr std::uint8_t kSync = 0xD5;
inline constexpr std::uint8_t kBusVersion = 0x01;
inline constexpr std::uint8_t kFlagPid = 0x01;
inline constexpr std::size_t kFrameOverhead = 10;  // sync..len (8) + crc (2)

struct BusFrame {
  std::uint8_t version = kBusVersion;
  DeviceId src = 0;
  DeviceId dst = 0;
  std::uint8_t msg_type = 0;
  std::uint8_t flags = 0;
  Bytes payload;

  bool contains_pid() const noexcept { return (flags & kFlagPid) != 0; }
  bool operator==(const BusFrame&) const = default;
};

Bytes encode_frame(const BusFrame& f);

/// Decodes one frame that starts at data[0]. Trailing bytes are ignored;
/// `consumed` receives the frame's wire length.
BusFrame decode_frame(std::span<const std::uint8_t> data, std::size_t* consumed = nullptr);

/// Incremental decoder over a byte stream. On a bad sync byte, version or
/// CRC it skips one byte and hunts for the next sync.
class FrameScanner {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<BusFrame> next();
  std::size_t skipped_bytes() const noexcept { return skipped_; }
  std::size_t buffered() const noexcept { return buf_.size() - pos_; }

 private:
  Bytes buf_;
  std::size_t pos_ = 0;
  std::size_t skipped_ = 0;
};

enum class Taint { Public, PID };
enum class WireType { U8, U16, I32, F32, F32Array, Bytes, String };

std::string to_string(Taint t);
std::string to_string(WireType w);

struct FieldSchema {
  std::string name;
  WireType wire = WireType::U8;
  Taint taint = Taint::Public;
};

struct MessageSchema {
  std::uint8_t msg_type = 0;
  std::string name;
  std::vector<FieldSchema> fields;

  const FieldSchema* field(const std::string& name) const;
};

namespace msg {
inline constexpr std::uint8_t kWake = 0x01;
inline constexpr std::uint8_t kTranscript = 0x10;
inline constexpr std::uint8_t kAudioSamples = 0x11;
inline constexpr std::uint8_t kSpeak = 0x12;
inline constexpr std::uint8_t kDetections = 0x20;
inline constexpr std::uint8_t kFaceEmbedding = 0x21;
inline constexpr std::uint8_t kImageFrame = 0x22;
inline constexpr std::uint8_t kVideoChunk = 0x23;
inline constexpr std::uint8_t kSecureStream = 0x30;
inline constexpr std::uint8_t kAction = 0x40;
inline constexpr std::uint8_t kPairRequest = 0x41;
inline constexpr std::uint8_t kReflash = 0x42;
}  // namespace msg

class SchemaRegistry {
 public:
  /// ConfigError on a duplicate type or duplicate field name.
  void add(MessageSchema s);
  const MessageSchema* find(std::uint8_t msg_type) const;
  /// UnknownMessageType when absent.
  const MessageSchema& at(std::uint8_t msg_type) const;
  const std::map<std::uint8_t, MessageSchema>& schemas() const noexcept { return schemas_; }

  static SchemaRegistry from_json(const Json& j);
  Json to_json() const;

 private:
  std::map<std::uint8_t, MessageSchema> schemas_;
};

/// Messages exchanged by the hub, the two nodes and the companion app.
const SchemaRegistry& default_registry();

using FieldValue = std::variant<std::int64_t, double, std::vector<float>, Bytes, std::string>;

/// A typed message; only populated fields are present in `fields`.
struct Message {
  std::uint8_t msg_type = 0;
  std::map<std::string, FieldValue> fields;

  bool operator==(const Message&) const = default;
};

bool populates_pid(const Message& m, const SchemaRegistry& reg);

Bytes encode_payload(const Message& m, const SchemaRegistry& reg);
Message decode_payload(std::uint8_t msg_type, std::span<const std::uint8_t> payload, const SchemaRegistry& reg);

/// Frame with flags bit0 derived from the schema.
BusFrame make_frame(const Message& m, DeviceId src, DeviceId dst, const SchemaRegistry& reg);

enum class DenyReason { None, PrivacyViolation, TaintFlagMismatch };
std::string to_string(DenyReason r);

struct EgressDecision {
  bool allowed = true;
  DenyReason reason = DenyReason::None;

  static EgressDecision allow() { return {}; }
  static EgressDecision deny(DenyReason r) { return {false, r}; }
};

/// What the guard knows about the secure link.
struct LinkState {
  bool paired = false;
  DeviceId app = device::kApp;
};

/// Pure policy check. UnknownMessageType if the type is not registered.
EgressDecision guard_egress(const Message& m, std::uint8_t flags, DeviceId src, DeviceId dst,
                            const SchemaRegistry& reg, const LinkState& link);

inline constexpr std::size_t kNonceBytes = 8;
inline constexpr std::size_t kTagBytes = 16;

/// One end of the paired link. Chunks are nonce (8 bytes, big-endian
/// counter) || ciphertext || tag (16 bytes).
class SecureChannel {
 public:
  bool paired() const noexcept { return key_.has_value(); }
  /// Derives the session key from shared key material. AlreadyPaired if paired.
  void pair(std::span<const std::uint8_t> key_material);
  void unpair() noexcept;

  /// NotPaired before pairing.
  Bytes stream_chunk(std::span<const std::uint8_t> plaintext);
  /// AuthenticationFailure on a bad tag, a short chunk or a replayed nonce.
  Bytes open_chunk(std::span<const std::uint8_t> chunk);

  std::uint64_t next_nonce() const noexcept { return send_nonce_; }

 private:
  std::optional<std::array<std::uint8_t, 32>> key_;
  std::uint64_t send_nonce_ = 1;
  std::uint64_t last_received_ = 0;
};

struct Delivery {
  BusFrame frame;
  Message message;
};

struct Denial {
  std::uint8_t msg_type = 0;
  DeviceId src = 0;
  DeviceId dst = 0;
  std::string reason;
};

/// Routes messages over the simulated wire: encode, decode, guard, deliver.
/// SecureStream chunks reaching the app are authenticated before delivery.
class PrivacyBus {
 public:
  explicit PrivacyBus(SchemaRegistry reg = default_registry());

  /// Pairs the vision-side and app-side channel ends with the same material.
  void pair_app(std::span<const std::uint8_t> key_material);
  bool paired() const noexcept { return vision_end_.paired(); }
  SecureChannel& vision_end() noexcept { return vision_end_; }

  /// Sends with schema-derived flags, or `flags_override` to model a lying sender.
  EgressDecision send(const Message& m, DeviceId src, DeviceId dst,
                      std::optional<std::uint8_t> flags_override = std::nullopt);

  const std::vector<Delivery>& inbox(DeviceId dev) const;
  std::vector<Delivery> drain(DeviceId dev);
  const std::vector<Denial>& denials() const noexcept { return denials_; }
  const SchemaRegistry& registry() const noexcept { return reg_; }
  std::uint64_t frames_sent() const noexcept { return frames_; }
  std::uint64_t bytes_sent() const noexcept { return bytes_; }

 private:
  SchemaRegistry reg_;
  SecureChannel vision_end_;
  SecureChannel app_end_;
  std::map<DeviceId, std::vector<Delivery>> inboxes_;
  std::vector<Denial> denials_;
  std::uint64_t frames_ = 0;
  std::uint64_t bytes_ = 0;
};

}  // namespace david
