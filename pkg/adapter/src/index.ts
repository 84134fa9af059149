export { encodeEvec, decodeEvec, EvecRecord } from './evec'
export { Encoder, resolveEncoder } from './encoders'
export {
  readImageManifest,
  readSectionManifest,
  readQueryManifest,
  ImageItem,
  SectionItem,
  QueryItem,
} from './manifest'
export { AdapterJob, JobReport, embedImages, embedSections, embedQueryTokens } from './jobs'
